"""Downstream heads on E: freeze/unfreeze finetuning, linear probes and evaluation."""

from __future__ import annotations

import csv
import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from byb import tensor as T
from byb.baselines import _classification_loss, labeled_subset
from byb.checkpoint import load_archive, save_archive
from byb.config import RunConfig
from byb.data import ConfigError, UbsSample
from byb.metrics import auroc_binary, auroc_macro, ks_score
from byb.model import Model, build_model, forward_sequence, make_batch, representations
from byb.nn import LinearParams, MLPParams, init_linear, init_mlp, linear_forward, mlp_forward
from byb.pretrain import StepResult, fit
from byb.seqmodel import sequence_representation
from byb.tensor import Tensor


@dataclass
class Classifier:
    model: Model
    task: str
    num_classes: int
    head: MLPParams | LinearParams
    # feature standardization, only used by the frozen linear probe
    shift: np.ndarray | None = None
    spread: np.ndarray | None = None

    def head_tensors(self) -> dict[str, Tensor]:
        return {f"head.{self.task}.{k}": t for k, t in self.head.tensors().items()}

    def _standardize(self, E: Tensor) -> Tensor:
        if self.shift is None:
            return E
        return Tensor((E.data - self.shift) / self.spread)

    def logits(self, E: Tensor) -> Tensor:
        E = self._standardize(E)
        if isinstance(self.head, LinearParams):
            return linear_forward(self.head, E)
        return mlp_forward(self.head, E)

    def predict_proba(self, samples: Sequence[UbsSample], cfg: RunConfig) -> np.ndarray:
        E = representations(self.model, list(samples), cfg)
        return T._softmax_np(self.logits(Tensor(E)).data, -1, 1.0)


def _num_classes(data: Sequence[UbsSample], task: str) -> int:
    return max(2, max(int(s.labels[task]) for s in data) + 1)


def _init_head(kind: str, d: int, num_classes: int, cfg: RunConfig) -> MLPParams | LinearParams:
    rng = np.random.default_rng(cfg.seed + 101)
    if kind == "linear":
        return init_linear(rng, d, num_classes)
    if kind == "mlp":
        return init_mlp(rng, d, cfg.head_hidden, num_classes)
    raise ConfigError(f"unknown head {kind!r}")


def finetune(
    model: Model,
    dataset: Sequence[UbsSample],
    task: str,
    cfg: RunConfig,
    mode: str | None = None,
    head: str | None = None,
    num_classes: int | None = None,
    out_dir=None,
) -> Classifier:
    """Train a new head on E with cross-entropy; the predictor is never used.

    freeze:   only the head is optimized (E is computed once).
    unfreeze: head, sequence model and student encoder are optimized.
    The linear head in freeze mode is a probe: standardized features,
    full-batch updates for ``cfg.probe_steps`` steps.
    """
    mode = mode or cfg.mode
    kind = head or cfg.head
    if mode not in ("freeze", "unfreeze"):
        raise ConfigError(f"unknown finetune mode {mode!r}")
    data = labeled_subset(dataset, task)
    C = num_classes or _num_classes(data, task)
    clf = Classifier(model, task, C, _init_head(kind, model.dim, C, cfg))
    labels = np.array([int(s.labels[task]) for s in data])
    if labels.max() >= C:
        raise ConfigError(f"label {labels.max()} outside {C} classes")

    if mode == "freeze":
        E = representations(model, data, cfg)
        run_cfg = cfg
        epochs, lr = cfg.finetune_epochs, cfg.finetune_lr
        if kind == "linear":
            clf.shift = E.mean(axis=0)
            clf.spread = E.std(axis=0) + 1e-8
            run_cfg = dataclasses.replace(cfg, batch_size=len(data), weight_decay=0.0)
            epochs, lr = cfg.probe_steps, cfg.probe_lr
        features = Tensor(E)

        def step(index, _rng):
            idx = np.asarray(index)
            logits = clf.logits(Tensor(features.data[idx]))
            return StepResult(_classification_loss(logits, labels[idx]), len(idx), 0)

        fit(clf.head_tensors(), range(len(data)), run_cfg, step, out_dir=out_dir, epochs=epochs, lr=lr)
        return clf

    params = dict(clf.head_tensors())
    params.update(model.encoder_tensors())

    def step_unfrozen(samples, _rng):
        batch = make_batch(cfg, samples, with_targets=False)
        E = sequence_representation(forward_sequence(model, batch), batch.valid)
        y = np.array([int(s.labels[task]) for s in samples])
        return StepResult(_classification_loss(clf.logits(E), y), len(samples), 0)

    fit(params, data, cfg, step_unfrozen, out_dir=out_dir, epochs=cfg.finetune_epochs, lr=cfg.finetune_lr)
    return clf


@dataclass
class EvalReport:
    task: str
    n: int
    metrics: dict[str, float]
    positive_rate: float | None = None
    class_histogram: dict[int, int] = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True)

    def rows(self) -> list[tuple]:
        return [(self.task, name, value, self.n) for name, value in self.metrics.items()]

    def write(self, out_dir: str | Path) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "eval.json").write_text(self.to_json(), encoding="utf-8")
        with open(out / "eval.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(("task", "metric", "value", "n"))
            w.writerows(self.rows())


def score_report(task: str, proba: np.ndarray, labels: np.ndarray) -> EvalReport:
    """AUROC + KS for two classes, macro AUROC otherwise."""
    labels = np.asarray(labels, dtype=np.int64)
    values, counts = np.unique(labels, return_counts=True)
    hist = {int(v): int(c) for v, c in zip(values, counts)}
    if proba.shape[1] == 2:
        pos = proba[:, 1]
        metrics = {"auroc": auroc_binary(pos, labels), "ks": ks_score(pos, labels)}
        return EvalReport(task, len(labels), metrics, float(labels.mean()), hist)
    return EvalReport(task, len(labels), {"macro_auroc": auroc_macro(proba, labels)}, None, hist)


def evaluate(clf: Classifier, dataset: Sequence[UbsSample], cfg: RunConfig) -> EvalReport:
    data = labeled_subset(dataset, clf.task)
    labels = np.array([int(s.labels[clf.task]) for s in data])
    return score_report(clf.task, clf.predict_proba(data, cfg), labels)


def probe_auroc(model: Model, train: Sequence[UbsSample], test: Sequence[UbsSample], task: str, cfg: RunConfig) -> float:
    """Frozen linear probe score on ``test``: macro AUROC, or AUROC for binary tasks."""
    clf = finetune(model, train, task, cfg, mode="freeze", head="linear")
    report = evaluate(clf, test, cfg)
    return report.metrics.get("macro_auroc", report.metrics.get("auroc"))


def save_classifier(clf: Classifier, path: str | Path) -> None:
    """Archive the model together with the head (and probe standardization)."""
    state = clf.model.state()
    state.update({k: t.data for k, t in clf.head_tensors().items()})
    if clf.shift is not None:
        state[f"probe.{clf.task}.shift"] = clf.shift
        state[f"probe.{clf.task}.spread"] = clf.spread
    save_archive(path, state)


def load_classifier(cfg: RunConfig, path: str | Path, task: str) -> Classifier:
    state = load_archive(path)
    model = build_model(cfg)
    model.load_state(state)
    prefix = f"head.{task}."
    if prefix + "w" in state:
        w, b = state[prefix + "w"], state[prefix + "b"]
        head = LinearParams(Tensor(w.copy(), requires_grad=True), Tensor(b.copy(), requires_grad=True))
        C = w.shape[1]
    elif prefix + "w1" in state:
        head = MLPParams(*(Tensor(state[prefix + k].copy(), requires_grad=True) for k in ("w1", "b1", "w2", "b2")))
        C = head.dims[2]
    else:
        raise ConfigError(f"{path} holds no head for task {task!r}")
    clf = Classifier(model, task, C, head)
    if f"probe.{task}.shift" in state:
        clf.shift = state[f"probe.{task}.shift"]
        clf.spread = state[f"probe.{task}.spread"]
    return clf
