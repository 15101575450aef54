"""Bootstrap pretraining: window losses, the causal objective and the training loop."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from byb import tensor as T
from byb.batch import collate
from byb.config import RunConfig
from byb.data import ConfigError, UbsSample, WindowPlan
from byb.encoder import EncoderParams, ema_update
from byb.model import Model, forward_sequence, make_batch, teacher_targets
from byb.nn import MLPParams
from byb.optim import Adam
from byb.seqmodel import predict
from byb.tensor import NumericError, Tape, Tensor

log = logging.getLogger(__name__)

METRIC_COLUMNS = ("step", "epoch", "loss", "windows_contributing", "samples_skipped", "wall_ms")


@dataclass(frozen=True)
class LossConfig:
    kind: str = "cross_entropy"
    temperature: float = 0.1
    ce_form: str = "distillation"

    def __post_init__(self):
        if self.kind not in ("cross_entropy", "mse"):
            raise ValueError(f"unknown loss kind {self.kind!r}")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if self.ce_form not in ("distillation", "literal"):
            raise ValueError(f"unknown ce_form {self.ce_form!r}")

    @classmethod
    def from_run(cls, cfg: RunConfig) -> "LossConfig":
        return cls(cfg.loss, cfg.temperature, cfg.ce_form)


def _const(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def loss_ce(pred: Tensor, target, tau: float = 0.1, form: str = "distillation") -> Tensor:
    """Cross-entropy between temperature softmaxes, reduced over the last axis.

    distillation: -sum softmax(target/tau) * log softmax(pred/tau)
    literal:      -sum softmax(pred/tau) * log softmax(target/tau)
    """
    target = _const(target)
    if pred.shape != target.shape:
        raise T.ShapeError(f"loss_ce: pred {pred.shape} vs target {target.shape}")
    if not (np.all(np.isfinite(pred.data)) and np.all(np.isfinite(target.data))):
        raise NumericError("loss_ce: non-finite input")
    if form == "distillation":
        weights = Tensor(T._softmax_np(target.data, -1, tau))
        logp = T.log_softmax(pred, axis=-1, temperature=tau)
    elif form == "literal":
        weights = T.softmax(pred, axis=-1, temperature=tau)
        logp = T.log_softmax(target, axis=-1, temperature=tau)
    else:
        raise ValueError(f"unknown ce form {form!r}")
    return T.scale(T.sum_(T.mul(weights, logp), axis=-1), -1.0)


def loss_mse(pred: Tensor, target) -> Tensor:
    """(1/d) ||pred - target||^2 over the last axis."""
    diff = T.sub(pred, _const(target))
    return T.mean(T.mul(diff, diff), axis=-1)


def window_loss(pred: Tensor, target, cfg: LossConfig) -> Tensor:
    if cfg.kind == "mse":
        return loss_mse(pred, target)
    return loss_ce(pred, target, cfg.temperature, cfg.ce_form)


@dataclass
class StepResult:
    loss: Tensor | None
    windows: int
    skipped: int


def batch_causal_loss(
    pred: Tensor, targets: np.ndarray, contributing: np.ndarray, cfg: LossConfig
) -> StepResult:
    """Mean over samples of the per-sample mean window loss.

    ``pred`` and ``targets`` are [B, K, d]; ``contributing[b, k]`` marks
    windows whose position and prediction window are both non-empty.
    """
    counts = contributing.sum(axis=1)
    live = counts > 0
    skipped = int((~live).sum())
    if skipped:
        log.warning("%d sample(s) have no contributing window and are skipped", skipped)
    if not live.any():
        return StepResult(None, 0, skipped)
    w = np.where(contributing, 1.0 / np.maximum(counts, 1)[:, None], 0.0) / live.sum()
    per_window = window_loss(pred, np.where(contributing[..., None], targets, 0.0), cfg)
    return StepResult(T.sum_(T.mul(per_window, Tensor(w))), int(contributing.sum()), skipped)


def causal_loss(
    H: Tensor,
    predictor: MLPParams | None,
    teacher: EncoderParams,
    sample: UbsSample,
    plan: WindowPlan,
    cfg: LossConfig,
) -> tuple[Tensor | None, int]:
    """Single-sample objective; H is this sample's [K, d] sequence output.

    Returns (None, 0) when no window contributes.
    """
    batch = collate([sample], plan, teacher.max_id, teacher.max_ids)
    targets = teacher_targets(teacher, batch)
    Hb = T.reshape(H, (1,) + H.shape)
    pred = predict(predictor, Hb) if predictor is not None else Hb
    res = batch_causal_loss(pred, targets, batch.contributing, cfg)
    return res.loss, res.windows


# ------------------------------------------------------------------ loop

StepFn = Callable[[list, np.random.Generator], StepResult]


def fit(
    params: Mapping[str, Tensor],
    dataset: Sequence[UbsSample],
    cfg: RunConfig,
    step_fn: StepFn,
    after_step: Callable[[], None] | None = None,
    out_dir: str | Path | None = None,
    epochs: int | None = None,
    lr: float | None = None,
    save: Callable[[Path], None] | None = None,
) -> list[dict]:
    """Shuffled minibatch Adam loop; writes metrics.csv (and timing.csv) into ``out_dir``."""
    if not dataset:
        raise ConfigError("cannot train on an empty dataset")
    epochs = cfg.epochs if epochs is None else epochs
    opt = Adam(
        params,
        lr=cfg.lr if lr is None else lr,
        weight_decay=cfg.weight_decay,
        betas=(cfg.beta1, cfg.beta2),
        eps=cfg.adam_eps,
    )
    rng = np.random.default_rng(cfg.seed)
    out = Path(out_dir) if out_dir is not None else None
    writer = timing = None
    files = []
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        fh = open(out / "metrics.csv", "w", newline="")
        tf = open(out / "timing.csv", "w", newline="")
        files = [fh, tf]
        writer = csv.writer(fh)
        writer.writerow(METRIC_COLUMNS)
        timing = csv.writer(tf)
        timing.writerow(("step", "wall_ms"))

    records = []
    step = 0
    try:
        for epoch in range(epochs):
            order = rng.permutation(len(dataset))
            for i in range(0, len(order), cfg.batch_size):
                t0 = time.perf_counter()
                samples = [dataset[j] for j in order[i : i + cfg.batch_size]]
                tape = Tape()
                tape.watch(params.values())
                res = step_fn(samples, rng)
                if res.loss is None:
                    tape.consumed = True
                    loss_value = float("nan")
                else:
                    loss_value = res.loss.item()
                    grads = tape.backward(res.loss)
                    opt.step(grads)
                    if after_step is not None:
                        after_step()
                step += 1
                wall = (time.perf_counter() - t0) * 1000.0
                rec = {
                    "step": step,
                    "epoch": epoch,
                    "loss": loss_value,
                    "windows_contributing": res.windows,
                    "samples_skipped": res.skipped,
                    "wall_ms": 0.0 if cfg.deterministic else wall,
                }
                records.append(rec)
                if writer is not None:
                    writer.writerow([rec[c] if c != "loss" else repr(loss_value) for c in METRIC_COLUMNS])
                    timing.writerow((step, f"{wall:.3f}"))
                if save is not None and out is not None and cfg.checkpoint_every and step % cfg.checkpoint_every == 0:
                    save(out / f"checkpoint_step{step}.bybt")
    finally:
        for f in files:
            f.close()
    return records


def byb_step(model: Model, cfg: RunConfig) -> StepFn:
    loss_cfg = LossConfig.from_run(cfg)

    def step(samples, rng):
        batch = make_batch(cfg, samples)
        H = forward_sequence(model, batch)
        targets = teacher_targets(model.pair.teacher, batch)
        pred = predict(model.predictor, H) if model.predictor is not None else H
        return batch_causal_loss(pred, targets, batch.contributing, loss_cfg)

    return step


def pretrain(model: Model, dataset: Sequence[UbsSample], cfg: RunConfig, out_dir=None) -> list[dict]:
    """Student/sequence-model/predictor by Adam on the causal loss, teacher by EMA."""
    model.pair.m_ema = cfg.m_ema
    return fit(
        model.trainable(),
        dataset,
        cfg,
        byb_step(model, cfg),
        after_step=lambda: ema_update(model.pair),
        out_dir=out_dir,
        save=model.save,
    )
