"""Turn a list of samples into flat arrays for the batched encoder and losses."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from byb.data import UbsSample, WindowPlan
from byb.encoder import hash_ids


@dataclass
class EventBlock:
    """Flat ids of a set of behaviors (see :func:`byb.encoder.encode_events`)."""

    ids: np.ndarray
    slots: np.ndarray
    event_of: np.ndarray
    num_events: int
    first_id: np.ndarray  # per behavior
    owner: np.ndarray  # sample index per behavior


@dataclass
class Batch:
    size: int
    num_buckets: int
    obs: EventBlock
    obs_segment: np.ndarray  # b * K + bucket, per observed behavior
    valid: np.ndarray  # [B, K] bool, bucket non-empty
    tgt: EventBlock  # behaviors inside at least one prediction window
    tgt_member: np.ndarray  # index into tgt behaviors
    tgt_segment: np.ndarray  # b * K + (k - 1) for window k
    target_valid: np.ndarray  # [B, K] bool, window k = position + 1 non-empty
    samples: list[UbsSample]

    @property
    def contributing(self) -> np.ndarray:
        return self.valid & self.target_valid


def _block(parts: list[tuple[np.ndarray, np.ndarray, int]], max_id: int, max_ids: int, hash_overflow: bool) -> EventBlock:
    """``parts`` holds (event offsets, flat ids, owner) per sample, already sliced."""
    ids_l, lens_l, owners = [], [], []
    for offsets, flat, owner in parts:
        lens = np.diff(offsets)
        ids_l.append(flat)
        lens_l.append(lens)
        owners.append(np.full(len(lens), owner, dtype=np.int64))
    ids = np.concatenate(ids_l) if ids_l else np.zeros(0, dtype=np.int64)
    lens = np.concatenate(lens_l) if lens_l else np.zeros(0, dtype=np.int64)
    owner = np.concatenate(owners) if owners else np.zeros(0, dtype=np.int64)
    if lens.size and lens.max() > max_ids:
        raise ValueError(f"behavior with {lens.max()} ids exceeds max_ids_per_event={max_ids}")
    if hash_overflow:
        ids = hash_ids(ids, max_id)
    elif ids.size and ids.max() > max_id:
        raise IndexError(f"id {ids.max()} exceeds max id {max_id}; enable hash_overflow to fold it")
    n = len(lens)
    starts = np.zeros(n, dtype=np.int64)
    if n:
        np.cumsum(lens[:-1], out=starts[1:])
    event_of = np.repeat(np.arange(n), lens)
    slots = np.arange(len(ids)) - np.repeat(starts, lens)
    first = ids[starts] if n else np.zeros(0, dtype=np.int64)
    return EventBlock(ids, slots, event_of, n, first, owner)


def _subset(sample: UbsSample, index: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Offsets and flat ids for a subset of a sample's behaviors."""
    lo, hi = sample.offsets[index], sample.offsets[index + 1]
    lens = hi - lo
    offsets = np.zeros(len(index) + 1, dtype=np.int64)
    np.cumsum(lens, out=offsets[1:])
    take = np.repeat(lo - offsets[:-1], lens) + np.arange(offsets[-1])
    return offsets, sample.flat_ids[take]


def collate(
    samples: Sequence[UbsSample],
    plan: WindowPlan,
    max_id: int,
    max_ids: int,
    hash_overflow: bool = False,
    with_targets: bool = True,
) -> Batch:
    K = plan.num_buckets
    d1, d2 = plan.pool_window_seconds, plan.prediction_window_seconds
    obs_parts, tgt_parts = [], []
    obs_seg, tgt_member, tgt_seg = [], [], []
    tgt_base = 0
    for b, s in enumerate(samples):
        ts = s.timestamps
        n_obs = int(np.searchsorted(ts, plan.observation_seconds))
        obs_parts.append((s.offsets[: n_obs + 1], s.flat_ids[: s.offsets[n_obs]], b))
        obs_seg.append(b * K + ts[:n_obs] // d1)
        if not with_targets:
            continue
        lo, hi = np.searchsorted(ts, [d1, K * d1 + d2])
        t = ts[lo:hi]
        kmax = np.minimum(t // d1, K)
        kmin = np.maximum((t - d2) // d1 + 1, 1)
        reps = np.maximum(kmax - kmin + 1, 0)
        keep = np.nonzero(reps > 0)[0]
        idx = lo + keep
        offsets, flat = _subset(s, idx)
        tgt_parts.append((offsets, flat, b))
        reps = reps[keep]
        local = np.repeat(np.arange(len(keep)), reps)
        starts = np.repeat(kmin[keep], reps)
        within = np.arange(int(reps.sum())) - np.repeat(np.cumsum(reps) - reps, reps)
        tgt_member.append(tgt_base + local)
        tgt_seg.append(b * K + starts + within - 1)
        tgt_base += len(keep)

    B = len(samples)
    obs = _block(obs_parts, max_id, max_ids, hash_overflow)
    obs_segment = np.concatenate(obs_seg) if obs_seg else np.zeros(0, dtype=np.int64)
    valid = (np.bincount(obs_segment, minlength=B * K) > 0).reshape(B, K)
    if with_targets:
        tgt = _block(tgt_parts, max_id, max_ids, hash_overflow)
        member = np.concatenate(tgt_member) if tgt_member else np.zeros(0, dtype=np.int64)
        segment = np.concatenate(tgt_seg) if tgt_seg else np.zeros(0, dtype=np.int64)
    else:
        tgt = _block([], max_id, max_ids, hash_overflow)
        member = segment = np.zeros(0, dtype=np.int64)
    target_valid = (np.bincount(segment, minlength=B * K) > 0).reshape(B, K)
    return Batch(B, K, obs, obs_segment, valid, tgt, member, segment, target_valid, list(samples))
