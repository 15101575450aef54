"""Comparison pretraining methods sharing the encoder + sequence-model architecture.

nbp         next behavior prediction (first id of the next non-empty day)
mbm1/mbm2   masked day prediction, mask ratio 0.1 / 0.2, bidirectional attention
cts         contrastive: within-day shuffled view as positive, batch as negatives
msdp        multi-label presence of a top-K frequent-id vocabulary per window
supervised  labels only, from scratch
"""

from __future__ import annotations

import logging
from typing import Sequence

import numpy as np

from byb import tensor as T
from byb.batch import Batch
from byb.config import RunConfig
from byb.data import ConfigError, UbsSample, WindowPlan
from byb.model import Model, make_batch, pooled_inputs
from byb.nn import init_mlp, mlp_forward, uniform, zeros
from byb.pretrain import StepResult, fit, pretrain
from byb.seqmodel import encode_sequence, sequence_representation
from byb.tensor import Tensor

log = logging.getLogger(__name__)

MASK_RATIOS = {"mbm1": 0.1, "mbm2": 0.2}


def _classification_loss(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean softmax cross-entropy of integer ``labels`` under ``logits`` [M, C]."""
    onehot = np.zeros(logits.shape)
    onehot[np.arange(len(labels)), labels] = 1.0
    picked = T.sum_(T.mul(T.log_softmax(logits, axis=-1), Tensor(onehot)), axis=-1)
    return T.scale(T.mean(picked), -1.0)


def _rows(H: Tensor, flat_index: np.ndarray) -> Tensor:
    B, K, d = H.shape
    return T.gather_rows(T.reshape(H, (B * K, d)), flat_index)


def _segment_first_ids(batch: Batch) -> np.ndarray:
    """First id of the first behavior in each (sample, bucket), -1 when empty."""
    out = np.full(batch.size * batch.num_buckets, -1, dtype=np.int64)
    seg, first = np.unique(batch.obs_segment, return_index=True)
    out[seg] = batch.obs.first_id[first]
    return out


def _segment_modal_ids(batch: Batch, vocab: int) -> np.ndarray:
    """Most frequent first id per (sample, bucket); ties go to the smaller id."""
    out = np.full(batch.size * batch.num_buckets, -1, dtype=np.int64)
    keys, counts = np.unique(batch.obs_segment * vocab + batch.obs.first_id, return_counts=True)
    seg, ids = keys // vocab, keys % vocab
    order = np.lexsort((ids, -counts, seg))
    seg, ids = seg[order], ids[order]
    first = np.r_[True, seg[1:] != seg[:-1]]
    out[seg[first]] = ids[first]
    return out


# ------------------------------------------------------------------ NBP


def next_behavior_targets(batch: Batch) -> np.ndarray:
    """[B, K] target id per position: first id of the next non-empty day, or -1."""
    B, K = batch.size, batch.num_buckets
    firsts = _segment_first_ids(batch).reshape(B, K)
    nxt = np.full((B, K), -1, dtype=np.int64)
    upcoming = np.full(B, -1, dtype=np.int64)
    for p in range(K - 1, -1, -1):
        nxt[:, p] = upcoming
        upcoming = np.where(batch.valid[:, p], firsts[:, p], upcoming)
    return np.where(batch.valid, nxt, -1)


def nbp_loss(H: Tensor, targets: np.ndarray, w: Tensor, b: Tensor) -> Tensor | None:
    flat = targets.reshape(-1)
    rows = np.nonzero(flat >= 0)[0]
    if rows.size == 0:
        return None
    logits = T.broadcast_add(T.matmul(_rows(H, rows), w), b)
    return _classification_loss(logits, flat[rows])


def nbp_pretrain(model: Model, dataset: Sequence[UbsSample], cfg: RunConfig, out_dir=None) -> list[dict]:
    rng = np.random.default_rng(cfg.seed + 11)
    d, V = model.dim, cfg.max_id + 1
    model.extra = {"nbp.w": uniform(rng, (d, V), d), "nbp.b": zeros(V)}

    def step(samples, _rng):
        batch = make_batch(cfg, samples, with_targets=False)
        targets = next_behavior_targets(batch)
        skipped = int((targets.max(axis=1) < 0).sum())
        H = encode_sequence(model.seq, pooled_inputs(model, batch), batch.valid)
        loss = nbp_loss(H, targets, model.extra["nbp.w"], model.extra["nbp.b"])
        return StepResult(loss, int((targets >= 0).sum()), skipped)

    return fit(model.trainable(), dataset, cfg, step, out_dir=out_dir, save=model.save)


# ------------------------------------------------------------------ MBM


def sample_day_mask(valid: np.ndarray, ratio: float, rng: np.random.Generator) -> np.ndarray:
    """Bernoulli(ratio) over valid days; a sequence with none masked gets one."""
    if not 0.0 < ratio < 1.0:
        raise ConfigError("mask_ratio must lie in (0, 1)")
    mask = (rng.random(valid.shape) < ratio) & valid
    for b in np.nonzero(~mask.any(axis=1) & valid.any(axis=1))[0]:
        mask[b, rng.choice(np.nonzero(valid[b])[0])] = True
    return mask


def mbm_pretrain(
    model: Model, dataset: Sequence[UbsSample], cfg: RunConfig, mask_ratio: float, out_dir=None
) -> list[dict]:
    if not 0.0 < mask_ratio < 1.0:
        raise ConfigError("mask_ratio must lie in (0, 1)")
    rng0 = np.random.default_rng(cfg.seed + 12)
    d, V = model.dim, cfg.max_id + 1
    model.extra = {
        "mbm.mask": Tensor(rng0.normal(0.0, 0.02, size=d), requires_grad=True),
        "mbm.w": uniform(rng0, (d, V), d),
        "mbm.b": zeros(V),
    }

    def step(samples, rng):
        batch = make_batch(cfg, samples, with_targets=False)
        B, K = batch.size, batch.num_buckets
        mask = sample_day_mask(batch.valid, mask_ratio, rng)
        X = T.reshape(pooled_inputs(model, batch), (B * K, d))
        m = mask.reshape(-1).astype(np.float64)
        X = T.add(
            T.scale_rows(X, Tensor(1.0 - m)),
            T.matmul(Tensor(m[:, None]), T.reshape(model.extra["mbm.mask"], (1, d))),
        )
        H = encode_sequence(model.seq, T.reshape(X, (B, K, d)), batch.valid, causal=False)
        rows = np.nonzero(mask.reshape(-1))[0]
        targets = _segment_modal_ids(batch, V)[rows]
        logits = T.broadcast_add(T.matmul(_rows(H, rows), model.extra["mbm.w"]), model.extra["mbm.b"])
        return StepResult(_classification_loss(logits, targets), int(rows.size), 0)

    return fit(model.trainable(), dataset, cfg, step, out_dir=out_dir, save=model.save)


# ------------------------------------------------------------------ CTS


def shuffle_within_days(sample: UbsSample, plan: WindowPlan, rng: np.random.Generator) -> UbsSample:
    """Permute which behavior sits at which timestamp inside each pooling window."""
    day = sample.timestamps // plan.pool_window_seconds
    order = np.lexsort((rng.random(len(day)), day))
    lens = np.diff(sample.offsets)[order]
    offsets = np.zeros(len(order) + 1, dtype=np.int64)
    np.cumsum(lens, out=offsets[1:])
    starts = sample.offsets[order]
    take = np.repeat(starts - offsets[:-1], lens) + np.arange(offsets[-1])
    return UbsSample(sample.user_id, sample.timestamps, offsets, sample.flat_ids[take], sample.labels)


def info_nce(z1: Tensor, z2: Tensor, temperature: float = 0.1) -> Tensor:
    """Row i of z1 should match row i of z2 against every other row (cosine / temperature)."""
    if z1.shape[0] < 2:
        raise ValueError("InfoNCE needs a batch of at least two users")
    a, b = T.l2_normalize(z1), T.l2_normalize(z2)
    logits = T.scale(T.matmul(a, T.transpose(b)), 1.0 / temperature)
    return _classification_loss(logits, np.arange(z1.shape[0]))


def cts_pretrain(model: Model, dataset: Sequence[UbsSample], cfg: RunConfig, out_dir=None) -> list[dict]:
    plan = cfg.plan

    def step(samples, rng):
        if len(samples) < 2:
            return StepResult(None, 0, len(samples))
        views = []
        for group in (samples, [shuffle_within_days(s, plan, rng) for s in samples]):
            batch = make_batch(cfg, group, with_targets=False)
            H = encode_sequence(model.seq, pooled_inputs(model, batch), batch.valid)
            views.append(sequence_representation(H, batch.valid))
        return StepResult(info_nce(views[0], views[1], cfg.cts_temperature), len(samples), 0)

    return fit(model.trainable(), dataset, cfg, step, out_dir=out_dir, save=model.save)


# ------------------------------------------------------------------ MSDP


def msdp_vocabulary(dataset: Sequence[UbsSample], size: int) -> np.ndarray:
    """The ``size`` most frequent first ids (ties: smaller id first)."""
    if size < 1:
        raise ConfigError("MSDP vocabulary size must be >= 1")
    ids, counts = np.unique(np.concatenate([s.first_ids for s in dataset]), return_counts=True)
    if size > len(ids):
        log.warning("MSDP vocabulary size %d clipped to %d distinct ids", size, len(ids))
        size = len(ids)
    order = np.lexsort((ids, -counts))
    return ids[order[:size]]


def presence_targets(batch: Batch, vocab: np.ndarray) -> np.ndarray:
    """[B, K, |vocab|]: 1 where a vocab id occurs in window k = position + 1."""
    B, K = batch.size, batch.num_buckets
    slot_of = {int(v): i for i, v in enumerate(vocab)}
    out = np.zeros((B * K, len(vocab)))
    ids = batch.tgt.first_id[batch.tgt_member]
    slots = np.array([slot_of.get(int(i), -1) for i in ids], dtype=np.int64)
    hit = slots >= 0
    out[batch.tgt_segment[hit], slots[hit]] = 1.0
    return out.reshape(B, K, len(vocab))


def msdp_loss(H: Tensor, targets: np.ndarray, valid: np.ndarray, w: Tensor, b: Tensor) -> Tensor | None:
    rows = np.nonzero(valid.reshape(-1))[0]
    if rows.size == 0:
        return None
    logits = T.broadcast_add(T.matmul(_rows(H, rows), w), b)
    y = targets.reshape(-1, targets.shape[-1])[rows]
    # binary cross-entropy with logits: softplus(x) - y x
    bce = T.sub(T.softplus(logits), T.mul(logits, Tensor(y)))
    return T.mean(T.mean(bce, axis=-1))


def msdp_pretrain(
    model: Model, dataset: Sequence[UbsSample], cfg: RunConfig, vocab_size: int | None = None, out_dir=None
) -> list[dict]:
    vocab = msdp_vocabulary(dataset, vocab_size or cfg.msdp_vocab)
    rng = np.random.default_rng(cfg.seed + 13)
    d = model.dim
    model.extra = {
        "msdp.w": uniform(rng, (d, len(vocab)), d),
        "msdp.b": zeros(len(vocab)),
        "msdp.vocab": Tensor(vocab.astype(np.float64)),
    }
    trainable = {k: v for k, v in model.trainable().items() if k != "msdp.vocab"}

    def step(samples, _rng):
        batch = make_batch(cfg, samples)
        H = encode_sequence(model.seq, pooled_inputs(model, batch), batch.valid)
        targets = presence_targets(batch, vocab)
        loss = msdp_loss(H, targets, batch.valid, model.extra["msdp.w"], model.extra["msdp.b"])
        return StepResult(loss, int(batch.valid.sum()), 0)

    return fit(trainable, dataset, cfg, step, out_dir=out_dir, save=model.save)


# ------------------------------------------------------------------ supervised


def labeled_subset(dataset: Sequence[UbsSample], task: str) -> list[UbsSample]:
    if not task:
        raise ConfigError("a task name is required")
    out = [s for s in dataset if task in s.labels]
    if not out:
        raise ConfigError(f"task {task!r} absent from dataset labels")
    return out


def supervised_train(
    model: Model, dataset: Sequence[UbsSample], task: str, cfg: RunConfig, num_classes: int | None = None, out_dir=None
) -> list[dict]:
    """Head and every encoder parameter trained jointly on task labels."""
    data = labeled_subset(dataset, task)
    C = num_classes or max(2, max(s.labels[task] for s in data) + 1)
    head = init_mlp(np.random.default_rng(cfg.seed + 14), model.dim, cfg.head_hidden, C)
    model.extra = {f"head.{task}.{k}": t for k, t in head.tensors().items()}

    def step(samples, _rng):
        batch = make_batch(cfg, samples, with_targets=False)
        H = encode_sequence(model.seq, pooled_inputs(model, batch), batch.valid)
        logits = mlp_forward(head, sequence_representation(H, batch.valid))
        labels = np.array([s.labels[task] for s in samples])
        return StepResult(_classification_loss(logits, labels), len(samples), 0)

    return fit(model.trainable(), data, cfg, step, out_dir=out_dir, save=model.save)


def run_method(model: Model, dataset: Sequence[UbsSample], cfg: RunConfig, out_dir=None) -> list[dict]:
    """Pretrain ``model`` with ``cfg.method``."""
    method = cfg.method
    if method == "byb":
        return pretrain(model, dataset, cfg, out_dir=out_dir)
    if method == "nbp":
        return nbp_pretrain(model, dataset, cfg, out_dir=out_dir)
    if method in MASK_RATIOS:
        return mbm_pretrain(model, dataset, cfg, MASK_RATIOS[method], out_dir=out_dir)
    if method == "cts":
        return cts_pretrain(model, dataset, cfg, out_dir=out_dir)
    if method == "msdp":
        return msdp_pretrain(model, dataset, cfg, out_dir=out_dir)
    if method == "supervised":
        return supervised_train(model, dataset, cfg.task, cfg, out_dir=out_dir)
    raise ConfigError(f"unknown method {method!r}")


__all__ = [
    "cts_pretrain",
    "info_nce",
    "mbm_pretrain",
    "msdp_pretrain",
    "msdp_vocabulary",
    "nbp_pretrain",
    "next_behavior_targets",
    "presence_targets",
    "run_method",
    "sample_day_mask",
    "shuffle_within_days",
    "supervised_train",
]
