"""Behavior encoder (embedding + gated merge), time pooling, student/teacher EMA."""

from __future__ import annotations

import copy
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from byb import tensor as T
from byb.data import BehaviorEvent
from byb.nn import sinusoidal_table, uniform, zeros
from byb.tensor import Tensor

PARAM_NAMES = ("embedding", "w1", "b1", "w2", "b2")


@dataclass
class EncoderParams:
    """Embedding table [I+1, d]; merge weights w1 [d, d], b1 [d], w2 [1, d], b2 [1].

    ``positions`` is the fixed id-position table [m_max, d].
    """

    embedding: Tensor
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor
    positions: np.ndarray

    @property
    def dim(self) -> int:
        return self.embedding.shape[1]

    @property
    def max_id(self) -> int:
        return self.embedding.shape[0] - 1

    @property
    def max_ids(self) -> int:
        return self.positions.shape[0]

    def tensors(self) -> dict[str, Tensor]:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def clone(self, requires_grad: bool) -> "EncoderParams":
        fresh = {
            name: Tensor(t.data.copy(), requires_grad=requires_grad, name=t.name)
            for name, t in self.tensors().items()
        }
        return EncoderParams(positions=self.positions.copy(), **fresh)


def init_encoder(d: int, max_id: int, max_ids: int, seed: int) -> EncoderParams:
    if min(d, max_id, max_ids) <= 0:
        raise ValueError("d, max_id and max_ids must be positive")
    rng = np.random.default_rng(seed)
    return EncoderParams(
        embedding=Tensor(rng.normal(0.0, 1.0, size=(max_id + 1, d)), requires_grad=True),
        w1=uniform(rng, (d, d), d),
        b1=zeros(d),
        w2=uniform(rng, (1, d), d),
        b2=zeros(1),
        positions=sinusoidal_table(max_ids, d),
    )


def hash_ids(ids: np.ndarray, max_id: int) -> np.ndarray:
    """Fold unseen ids back into the table by ``id mod (I + 1)``."""
    return np.asarray(ids, dtype=np.int64) % (max_id + 1)


def _merge(params: EncoderParams, ids: np.ndarray, slots: np.ndarray) -> tuple[Tensor, Tensor]:
    """Per-id transformed embeddings [N, d] and sigmoid gates [N]."""
    pos = Tensor(params.positions)
    w1t = T.transpose(params.w1)
    w2t = T.transpose(params.w2)
    if len(ids) > params.embedding.shape[0]:
        # project the table once, then gather: same values, fewer flops
        lin = T.add(
            T.gather_rows(T.matmul(params.embedding, w1t), ids),
            T.gather_rows(T.matmul(pos, w1t), slots),
        )
        gate = T.add(
            T.gather_rows(T.matmul(params.embedding, w2t), ids),
            T.gather_rows(T.matmul(pos, w2t), slots),
        )
    else:
        h = T.add(T.gather_rows(params.embedding, ids), T.gather_rows(pos, slots))
        lin = T.matmul(h, w1t)
        gate = T.matmul(h, w2t)
    lin = T.broadcast_add(lin, params.b1)
    gate = T.sigmoid(T.broadcast_add(gate, params.b2))
    return lin, T.reshape(gate, (len(ids),))


def _check_ids(params: EncoderParams, ids: np.ndarray) -> None:
    if ids.size and (ids.min() < 0 or ids.max() > params.max_id):
        bad = ids[(ids < 0) | (ids > params.max_id)][0]
        raise IndexError(f"id {bad} outside 0..{params.max_id}")


def encode_behavior(params: EncoderParams, ids: Sequence[int]) -> Tensor:
    """Embedding of one behavior: sum_j sigmoid(w2 h_j + b2) (w1 h_j + b1), h_j = e_j + p_j."""
    ids = np.asarray(ids, dtype=np.int64)
    if not 1 <= len(ids) <= params.max_ids:
        raise ValueError(f"behavior has {len(ids)} ids, expected 1..{params.max_ids}")
    _check_ids(params, ids)
    lin, gate = _merge(params, ids, np.arange(len(ids)))
    return T.sum_(T.scale_rows(lin, gate), axis=0)


def encode_events(
    params: EncoderParams,
    ids: np.ndarray,
    slots: np.ndarray,
    event_of: np.ndarray,
    num_events: int,
) -> Tensor:
    """Batched :func:`encode_behavior` over flat id arrays.

    ``slots[i]`` is the position of id i inside its behavior and
    ``event_of[i]`` the behavior it belongs to. Returns [num_events, d].
    """
    ids = np.asarray(ids, dtype=np.int64)
    _check_ids(params, ids)
    if slots.size and slots.max() >= params.max_ids:
        raise ValueError(f"behavior longer than {params.max_ids} ids")
    if num_events == 0:
        return Tensor(np.zeros((0, params.dim)))
    lin, gate = _merge(params, ids, slots)
    return T.segment_sum(T.scale_rows(lin, gate), event_of, num_events)


def segment_mean(x: Tensor, segment_ids: np.ndarray, num_segments: int) -> tuple[Tensor, np.ndarray]:
    """Mean of rows per segment; empty segments give zeros and valid=False."""
    seg = np.asarray(segment_ids, dtype=np.int64)
    counts = np.bincount(seg, minlength=num_segments)
    valid = counts > 0
    inv = np.where(valid, 1.0 / np.maximum(counts, 1), 0.0)
    if x.shape[0] == 0:
        return Tensor(np.zeros((num_segments, x.shape[1]))), valid
    return T.scale_rows(T.segment_sum(x, seg, num_segments), Tensor(inv)), valid


def pool_embeddings(embs: Sequence[Tensor], dim: int | None = None) -> tuple[Tensor, bool]:
    """Mean of behavior embeddings; an empty window is (zeros, False)."""
    if not embs:
        if dim is None:
            raise ValueError("dim is required to pool an empty window")
        return Tensor(np.zeros(dim)), False
    stacked = T.concat([T.reshape(e, (1, e.shape[0])) for e in embs], axis=0)
    return T.mean(stacked, axis=0), True


def supervision_embedding(teacher: EncoderParams, events: Sequence[BehaviorEvent]) -> tuple[Tensor, bool]:
    """Detached mean of teacher embeddings of the given behaviors."""
    pooled, valid = pool_embeddings([encode_behavior(teacher, ev.ids) for ev in events], teacher.dim)
    return T.detach(pooled), valid


@dataclass
class EncoderPair:
    student: EncoderParams
    teacher: EncoderParams
    m_ema: float = 0.995

    @classmethod
    def from_student(cls, student: EncoderParams, m_ema: float = 0.995) -> "EncoderPair":
        return cls(student, student.clone(requires_grad=False), m_ema)

    def __post_init__(self):
        if not 0.0 <= self.m_ema <= 1.0:
            raise ValueError("m_ema must lie in [0, 1]")
        if any(t.requires_grad for t in self.teacher.tensors().values()):
            raise ValueError("teacher tensors must not require grad")


class StateCorruptionError(RuntimeError):
    pass


def ema_update(pair: EncoderPair) -> None:
    """teacher <- m * teacher + (1 - m) * student, in place."""
    m = pair.m_ema
    student = pair.student.tensors()
    for name, t in pair.teacher.tensors().items():
        s = student[name]
        if s.shape != t.shape:
            raise StateCorruptionError(f"{name}: student {s.shape} vs teacher {t.shape}")
        t.data[...] = m * t.data + (1.0 - m) * s.data


def copy_pair(pair: EncoderPair) -> EncoderPair:
    return copy.deepcopy(pair)
