"""Flat run configuration, ``key = value`` config files and run manifests."""

from __future__ import annotations

import dataclasses
import json
import platform
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from byb.checkpoint import FORMAT_VERSION
from byb.data import ConfigError, WindowPlan
from byb.seqmodel import PRESETS, SeqModelConfig

__version__ = "0.1.0"

METHODS = ("byb", "nbp", "mbm1", "mbm2", "cts", "msdp", "supervised")


@dataclass
class RunConfig:
    method: str = "byb"
    data: str = ""
    finetune_data: str = ""
    test_data: str = ""
    checkpoint: str = ""
    out_dir: str = "runs/default"
    # windows, in days
    observation_days: int = 60
    pool_window_days: int = 1
    prediction_window_days: int = 1
    # architecture
    preset: str = ""
    d_model: int = 128
    ff_dim: int = 128
    num_layers: int = 4
    num_heads: int = 4
    predictor_hidden: int = 128
    head_hidden: int = 64
    max_id: int = 999
    max_ids_per_event: int = 3
    hash_overflow: bool = False
    # objective
    loss: str = "cross_entropy"
    temperature: float = 0.1
    ce_form: str = "distillation"
    m_ema: float = 0.995
    use_predictor: bool = True
    # optimizer
    lr: float = 1e-4
    weight_decay: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    epochs: int = 2
    batch_size: int = 64
    seed: int = 0
    checkpoint_every: int = 0
    deterministic: bool = True
    # baselines
    mask_ratio: float = 0.1
    msdp_vocab: int = 200
    cts_temperature: float = 0.1
    # finetuning / evaluation
    task: str = ""
    mode: str = "freeze"
    head: str = "mlp"
    finetune_epochs: int = 1
    finetune_lr: float = 1e-3
    probe_steps: int = 300
    probe_lr: float = 0.05
    num_samples: int = 5000
    # benchmark
    warmup_steps: int = 5
    bench_steps: int = 5
    unpooled_cap: int = 2048

    @property
    def plan(self) -> WindowPlan:
        return WindowPlan.days(self.observation_days, self.pool_window_days, self.prediction_window_days)

    @property
    def seq_config(self) -> SeqModelConfig:
        if self.preset:
            ff, layers = PRESETS[self.preset]
            return SeqModelConfig(self.d_model, ff, layers, self.num_heads)
        return SeqModelConfig(self.d_model, self.ff_dim, self.num_layers, self.num_heads)

    def validate(self) -> None:
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; choose from {METHODS}")
        if self.preset and self.preset not in PRESETS:
            raise ConfigError(f"unknown preset {self.preset!r}; choose from {sorted(PRESETS)}")
        if self.loss not in ("cross_entropy", "mse"):
            raise ConfigError("loss must be cross_entropy or mse")
        if self.ce_form not in ("distillation", "literal"):
            raise ConfigError("ce_form must be distillation or literal")
        if self.temperature <= 0:
            raise ConfigError("temperature must be positive")
        if not 0.0 <= self.m_ema <= 1.0:
            raise ConfigError("m_ema must lie in [0, 1]")
        if self.mode not in ("freeze", "unfreeze"):
            raise ConfigError("mode must be freeze or unfreeze")
        if self.head not in ("mlp", "linear"):
            raise ConfigError("head must be mlp or linear")
        if self.batch_size < 1 or self.epochs < 0:
            raise ConfigError("batch_size must be >= 1 and epochs >= 0")
        if not 0.0 < self.mask_ratio < 1.0:
            raise ConfigError("mask_ratio must lie in (0, 1)")
        self.plan  # raises on a bad window plan
        self.seq_config

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)


def parse_kv_text(text: str, source: str = "<config>") -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def parse_kv_file(path: str | Path) -> dict[str, str]:
    return parse_kv_text(Path(path).read_text(encoding="utf-8"), str(path))


def _coerce(value: Any, kind: type, key: str) -> Any:
    if not isinstance(value, str):
        return kind(value)
    if kind is bool:
        low = value.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{key}: not a boolean: {value!r}")
    try:
        return kind(value)
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {value!r} as {kind.__name__}") from exc


def coerce_into(cls, values: Mapping[str, Any], base=None):
    """Build a dataclass from string/primitive values, starting from ``base``."""
    names = {"int": int, "float": float, "bool": bool, "str": str}
    kinds = {f.name: names[f.type if isinstance(f.type, str) else f.type.__name__] for f in fields(cls)}
    unknown = set(values) - set(kinds)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    current = dataclasses.asdict(base) if base is not None else {}
    current.update({k: _coerce(v, kinds[k], k) for k, v in values.items()})
    return cls(**current)


def write_manifest(path: str | Path, command: str, config: Any, extra: Mapping[str, Any] | None = None) -> None:
    doc = {
        "command": command,
        "config": dataclasses.asdict(config),
        "seed": getattr(config, "seed", None),
        "code_version": __version__,
        "archive_format_version": FORMAT_VERSION,
        "python": platform.python_version(),
        "numpy": np.__version__,
    }
    if extra:
        doc.update(extra)
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True), encoding="utf-8")


def config_from_manifest(path: str | Path, cls=RunConfig):
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    return coerce_into(cls, doc["config"])
