"""Throughput/memory benchmark (pooled vs per-event sequences) and CSV exports."""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from byb import tensor as T
from byb.batch import Batch
from byb.config import RunConfig
from byb.data import ConfigError, UbsSample
from byb.encoder import ema_update, encode_events
from byb.model import Model, build_model, make_batch, pooled_inputs, representations, teacher_targets
from byb.optim import Adam
from byb.pretrain import LossConfig, StepResult, byb_step, window_loss
from byb.seqmodel import attention_maps, encode_sequence, predict
from byb.tensor import Tape, Tensor, track_memory

log = logging.getLogger(__name__)


@dataclass
class BenchReport:
    samples_per_second: float
    epoch_wall_seconds: float
    peak_resident_bytes: int
    unpooled_samples_per_second: float
    unpooled_peak_resident_bytes: int
    pooled_vs_unpooled_speedup: float
    batch_size: int
    timed_steps: int
    mean_raw_length: float
    pooled_length: int

    def write(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(asdict(self), indent=2, sort_keys=True), encoding="utf-8")


def unpooled_step(model: Model, cfg: RunConfig) -> Callable:
    """BYB step with the sequence model run over individual behaviors.

    Each sample keeps its last ``cfg.unpooled_cap`` observed behaviors; the
    output at the last behavior of day k-1 predicts window k.
    """
    loss_cfg = LossConfig.from_run(cfg)
    cap = cfg.unpooled_cap
    d = model.dim

    def step(samples, _rng):
        batch = make_batch(cfg, samples)
        B, K = batch.size, batch.num_buckets
        o = batch.obs
        counts = np.bincount(o.owner, minlength=B)
        start = np.cumsum(counts) - counts
        pos = np.arange(o.num_events) - start[o.owner]
        drop = np.maximum(counts - cap, 0)
        keep = pos >= drop[o.owner]
        pos = (pos - drop[o.owner])[keep]
        owner = o.owner[keep]
        L = int(np.minimum(counts, cap).max())

        emb = encode_events(model.pair.student, o.ids, o.slots, o.event_of, o.num_events)
        kept = T.gather_rows(emb, np.nonzero(keep)[0])
        X = T.reshape(T.segment_sum(kept, owner * L + pos, B * L), (B, L, d))
        valid = np.zeros((B, L), dtype=bool)
        valid[owner, pos] = True
        H = encode_sequence(model.seq, X, valid)

        # last kept behavior of each (sample, day)
        seg = batch.obs_segment[keep]
        last_of = np.full(B * K, -1, dtype=np.int64)
        np.maximum.at(last_of, seg, owner * L + pos)
        contributing = batch.contributing.reshape(-1) & (last_of >= 0)
        windows = np.nonzero(contributing)[0]
        per_sample = np.bincount(windows // K, minlength=B)
        live = per_sample > 0
        if not live.any():
            return StepResult(None, 0, B)
        targets = teacher_targets(model.pair.teacher, batch).reshape(B * K, d)[windows]
        Hsel = T.gather_rows(T.reshape(H, (B * L, d)), last_of[windows])
        pred = predict(model.predictor, Hsel) if model.predictor is not None else Hsel
        w = 1.0 / per_sample[windows // K] / live.sum()
        loss = T.sum_(T.mul(window_loss(pred, targets, loss_cfg), Tensor(w)))
        return StepResult(loss, len(windows), int((~live).sum()))

    return step


def _run_steps(model: Model, cfg: RunConfig, step_fn, batches: list[list[UbsSample]], warmup: int) -> tuple[float, int]:
    """Train on ``batches``; returns (seconds spent on the timed steps, peak tensor bytes)."""
    params = model.trainable()
    opt = Adam(params, lr=cfg.lr, weight_decay=cfg.weight_decay, betas=(cfg.beta1, cfg.beta2), eps=cfg.adam_eps)
    rng = np.random.default_rng(cfg.seed)
    elapsed = 0.0
    peak = 0
    for i, samples in enumerate(batches):
        with track_memory() as mem:
            t0 = time.perf_counter()
            tape = Tape()
            tape.watch(params.values())
            res = step_fn(samples, rng)
            if res.loss is not None:
                opt.step(tape.backward(res.loss))
                ema_update(model.pair)
            dt = time.perf_counter() - t0
        if i >= warmup:
            elapsed += dt
            peak = max(peak, mem.peak)
    return elapsed, peak


def bench(dataset: Sequence[UbsSample], cfg: RunConfig) -> BenchReport:
    """Steady-state pretraining throughput, pooled and unpooled, single-threaded.

    Both variants start from identical parameters and see identical batches.
    """
    B = cfg.batch_size
    warmup, steps = cfg.warmup_steps, cfg.bench_steps
    if warmup < 5:
        raise ConfigError("at least 5 warmup steps are required")
    if steps < 1:
        raise ConfigError("bench_steps must be >= 1")
    need = B * (warmup + steps)
    if len(dataset) < need:
        raise ConfigError(f"bench needs {need} samples for warmup + timing, got {len(dataset)}")
    order = np.random.default_rng(cfg.seed).permutation(len(dataset))[:need]
    batches = [[dataset[j] for j in order[i : i + B]] for i in range(0, need, B)]

    with threadpool_limits(limits=1):
        pooled_model = build_model(cfg)
        t_pooled, peak_pooled = _run_steps(pooled_model, cfg, byb_step(pooled_model, cfg), batches, warmup)
        raw_model = build_model(cfg)
        t_raw, peak_raw = _run_steps(raw_model, cfg, unpooled_step(raw_model, cfg), batches, warmup)

    timed = B * steps
    sps = timed / t_pooled
    raw_sps = timed / t_raw
    plan = cfg.plan
    raw_len = float(np.mean([np.searchsorted(s.timestamps, plan.observation_seconds) for s in dataset]))
    return BenchReport(
        samples_per_second=sps,
        epoch_wall_seconds=len(dataset) / sps,
        peak_resident_bytes=int(peak_pooled),
        unpooled_samples_per_second=raw_sps,
        unpooled_peak_resident_bytes=int(peak_raw),
        pooled_vs_unpooled_speedup=sps / raw_sps,
        batch_size=B,
        timed_steps=steps,
        mean_raw_length=raw_len,
        pooled_length=plan.num_buckets,
    )


def sample_subset(dataset: Sequence[UbsSample], n: int, seed: int) -> list[UbsSample]:
    """``n`` distinct samples in dataset order, drawn with ``seed``; clipped to the dataset size."""
    if n > len(dataset):
        log.warning("requested %d samples but the dataset has %d; clipping", n, len(dataset))
        n = len(dataset)
    idx = np.sort(np.random.default_rng(seed).choice(len(dataset), size=n, replace=False))
    return [dataset[i] for i in idx]


def export_embeddings(
    model: Model, dataset: Sequence[UbsSample], n: int, cfg: RunConfig, path: str | Path
) -> np.ndarray:
    """Write user_id, e0..e{d-1} and one column per label task; returns the E matrix."""
    samples = sample_subset(dataset, n, cfg.seed)
    E = representations(model, samples, cfg)
    tasks = sorted({t for s in samples for t in s.labels})
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["user_id"] + [f"e{i}" for i in range(E.shape[1])] + tasks)
        for s, row in zip(samples, E):
            w.writerow([s.user_id] + [repr(float(v)) for v in row] + [s.labels.get(t, "") for t in tasks])
    return E


def average_attention(model: Model, samples: Sequence[UbsSample], cfg: RunConfig, batch_size: int = 128) -> list[np.ndarray]:
    """Per-layer [K, K] attention averaged over samples and heads."""
    sums = None
    total = 0
    for i in range(0, len(samples), batch_size):
        part = samples[i : i + batch_size]
        batch: Batch = make_batch(cfg, part, with_targets=False)
        maps = attention_maps(model.seq, pooled_inputs(model, batch), batch.valid)
        scaled = [m * len(part) for m in maps]
        sums = scaled if sums is None else [a + b for a, b in zip(sums, scaled)]
        total += len(part)
    return [s / total for s in sums]


def export_attention(
    model: Model, dataset: Sequence[UbsSample], n: int, cfg: RunConfig, out_dir: str | Path, last: int = 10
) -> list[np.ndarray]:
    """attn_layer<i>.csv (K x K) plus attn_layer<i>_last<last>.csv holding the final ``last`` rows."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    maps = average_attention(model, sample_subset(dataset, n, cfg.seed), cfg)
    for i, m in enumerate(maps):
        np.savetxt(out / f"attn_layer{i}.csv", m, delimiter=",", fmt="%.17g")
        np.savetxt(out / f"attn_layer{i}_last{last}.csv", m[-last:], delimiter=",", fmt="%.17g")
    return maps


def lag_profile(attn: np.ndarray, lags: Sequence[int]) -> dict[int, float]:
    """Weight the last query row puts on the key ``lag`` positions back."""
    K = attn.shape[0]
    return {lag: float(attn[K - 1, K - 1 - lag]) for lag in lags if lag < K}
