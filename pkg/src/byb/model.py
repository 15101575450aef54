"""Model container: encoder pair + sequence model + optional predictor/heads."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from byb import tensor as T
from byb.batch import Batch, collate
from byb.checkpoint import load_archive, save_archive
from byb.config import RunConfig
from byb.encoder import EncoderPair, EncoderParams, encode_events, init_encoder, segment_mean
from byb.nn import MLPParams, load_into
from byb.seqmodel import (
    SeqModelParams,
    encode_sequence,
    init_predictor,
    init_seqmodel,
    sequence_representation,
)
from byb.tensor import Tensor


@dataclass
class Model:
    pair: EncoderPair
    seq: SeqModelParams
    predictor: MLPParams | None = None
    extra: dict[str, Tensor] = field(default_factory=dict)  # method-specific heads

    @property
    def dim(self) -> int:
        return self.seq.config.d_model

    def encoder_tensors(self) -> dict[str, Tensor]:
        out = {f"student.{k}": t for k, t in self.pair.student.tensors().items()}
        out.update({f"seqmodel.{k}": t for k, t in self.seq.tensors().items()})
        return out

    def trainable(self) -> dict[str, Tensor]:
        """Student encoder, sequence model, predictor and method heads."""
        out = self.encoder_tensors()
        if self.predictor is not None:
            out.update({f"predictor.{k}": t for k, t in self.predictor.tensors().items()})
        out.update(self.extra)
        return out

    def teacher_tensors(self) -> dict[str, Tensor]:
        return {f"teacher.{k}": t for k, t in self.pair.teacher.tensors().items()}

    def state(self) -> dict[str, np.ndarray]:
        out = {k: t.data for k, t in self.trainable().items()}
        out.update({k: t.data for k, t in self.teacher_tensors().items()})
        return out

    def save(self, path: str | Path) -> None:
        save_archive(path, self.state())

    def load_state(self, state: dict[str, np.ndarray], strict: bool = False) -> None:
        """Load every shared prefix present; ``strict`` also demands heads."""
        load_into(self.pair.student.tensors(), state, "student.")
        load_into(self.seq.tensors(), state, "seqmodel.")
        if any(k.startswith("teacher.") for k in state):
            load_into(self.pair.teacher.tensors(), state, "teacher.")
        else:
            load_into(self.pair.teacher.tensors(), state, "student.")
        if self.predictor is not None and (strict or "predictor.w1" in state):
            load_into(self.predictor.tensors(), state, "predictor.")
        if strict:
            load_into(self.extra, state)


def build_model(cfg: RunConfig, seed: int | None = None) -> Model:
    seed = cfg.seed if seed is None else seed
    seq_cfg = cfg.seq_config
    student = init_encoder(seq_cfg.d_model, cfg.max_id, cfg.max_ids_per_event, seed)
    pair = EncoderPair.from_student(student, cfg.m_ema)
    seq = init_seqmodel(seq_cfg, seed + 1)
    predictor = None
    if cfg.method == "byb" and cfg.use_predictor:
        predictor = init_predictor(seq_cfg.d_model, cfg.predictor_hidden, seed + 2)
    return Model(pair, seq, predictor)


def load_model(cfg: RunConfig, path: str | Path) -> Model:
    model = build_model(cfg)
    model.load_state(load_archive(path))
    return model


def make_batch(cfg: RunConfig, samples, with_targets: bool = True) -> Batch:
    return collate(samples, cfg.plan, cfg.max_id, cfg.max_ids_per_event, cfg.hash_overflow, with_targets)


def pooled_inputs(model: Model, batch: Batch, encoder=None) -> Tensor:
    """Student-encode observed behaviors and mean-pool them per bucket: [B, K, d]."""
    enc = model.pair.student if encoder is None else encoder
    o = batch.obs
    emb = encode_events(enc, o.ids, o.slots, o.event_of, o.num_events)
    pooled, _ = segment_mean(emb, batch.obs_segment, batch.size * batch.num_buckets)
    return T.reshape(pooled, (batch.size, batch.num_buckets, model.dim))


def forward_sequence(model: Model, batch: Batch, causal: bool = True, attn_weights=None) -> Tensor:
    return encode_sequence(model.seq, pooled_inputs(model, batch), batch.valid, causal, attn_weights)


def teacher_targets(teacher: EncoderParams, batch: Batch) -> np.ndarray:
    """Detached supervision embeddings for every (sample, window): [B, K, d]."""
    t = batch.tgt
    d = teacher.dim
    emb = encode_events(teacher, t.ids, t.slots, t.event_of, t.num_events)
    if batch.tgt_member.size:
        members = T.gather_rows(emb, batch.tgt_member)
    else:
        members = Tensor(np.zeros((0, d)))
    pooled, _ = segment_mean(members, batch.tgt_segment, batch.size * batch.num_buckets)
    return T.detach(pooled).data.reshape(batch.size, batch.num_buckets, d)


def representations(model: Model, samples, cfg: RunConfig, batch_size: int | None = None) -> np.ndarray:
    """E for each sample (no gradient), samples without observed behaviors excluded upstream."""
    bs = batch_size or max(cfg.batch_size, 128)
    out = []
    for i in range(0, len(samples), bs):
        batch = make_batch(cfg, samples[i : i + bs], with_targets=False)
        H = forward_sequence(model, batch)
        out.append(sequence_representation(H, batch.valid).data)
    return np.concatenate(out) if out else np.zeros((0, model.dim))
