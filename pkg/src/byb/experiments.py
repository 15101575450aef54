"""Desk-scale experiments shared by scripts/ and the acceptance tests."""

from __future__ import annotations

import dataclasses
import logging
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from byb.baselines import run_method
from byb.bench import average_attention, lag_profile, sample_subset
from byb.config import RunConfig
from byb.data import GeneratorConfig, generate_synthetic, split_dataset
from byb.finetune import probe_auroc
from byb.model import build_model

log = logging.getLogger(__name__)


@dataclass
class ProbeSetup:
    """Synthetic data and model sizes for the pretrained-vs-random probe comparison."""

    pretrain_users: int = 20000
    finetune_users: int = 5000
    test_users: int = 5000
    num_days: int = 30
    horizon_days: int = 5
    avg_events_per_day: float = 5.0
    drift_strength: float = 0.5
    periodicity_strength: float = 0.5
    d_model: int = 32
    ff_dim: int = 64
    num_layers: int = 2
    num_heads: int = 4
    predictor_hidden: int = 64
    lr: float = 3e-3
    epochs: int = 3
    batch_size: int = 64

    def generator(self, seed: int) -> GeneratorConfig:
        return GeneratorConfig(
            num_users=self.pretrain_users + self.finetune_users + self.test_users,
            num_days=self.num_days,
            horizon_days=self.horizon_days,
            avg_events_per_day=self.avg_events_per_day,
            drift_strength=self.drift_strength,
            periodicity_strength=self.periodicity_strength,
            seed=seed,
        )

    def run_config(self, seed: int, **overrides) -> RunConfig:
        cfg = RunConfig(
            observation_days=self.num_days,
            d_model=self.d_model,
            ff_dim=self.ff_dim,
            num_layers=self.num_layers,
            num_heads=self.num_heads,
            predictor_hidden=self.predictor_hidden,
            lr=self.lr,
            epochs=self.epochs,
            batch_size=self.batch_size,
            seed=seed,
        )
        return dataclasses.replace(cfg, **overrides)

    def splits(self, seed: int):
        data = generate_synthetic(self.generator(seed))
        return split_dataset(data, (self.pretrain_users, self.finetune_users, self.test_users))


@dataclass
class ProbeResult:
    seed: int
    pretrained: float
    random_init: float
    seconds: float

    @property
    def gain(self) -> float:
        return self.pretrained - self.random_init


def probe_comparison(setup: ProbeSetup, seed: int, out_dir: str | Path | None = None, **overrides) -> ProbeResult:
    """Frozen linear probe on E: pretrained encoder vs the same encoder at initialization."""
    t0 = time.perf_counter()
    pre, ft, test = setup.splits(seed)
    cfg = setup.run_config(seed, **overrides)
    task = setup.generator(seed).task
    with threadpool_limits(limits=1):
        baseline = probe_auroc(build_model(cfg), ft, test, task, cfg)
        model = build_model(cfg)
        run_method(model, pre, cfg, out_dir=out_dir)
        trained = probe_auroc(model, ft, test, task, cfg)
    res = ProbeResult(seed, trained, baseline, time.perf_counter() - t0)
    log.info("seed %d: pretrained %.4f random %.4f (%.0fs)", seed, trained, baseline, res.seconds)
    return res


@dataclass
class LagResult:
    seed: int
    best_layer: int
    on_lag: float  # mean weight at lags 7 and 14 of the last query row
    off_lag: float  # mean weight at lags 6, 8, 13 and 15
    profiles: list[dict[int, float]]

    @property
    def weekly(self) -> bool:
        return self.on_lag > self.off_lag


ON_LAGS = (7, 14)
OFF_LAGS = (6, 8, 13, 15)


def weekly_attention(
    setup: ProbeSetup, seed: int, num_samples: int = 1000, out_dir: str | Path | None = None
) -> LagResult:
    """Pretrain on strongly weekly data, then compare last-row attention at weekly and nearby lags."""
    pre, _, _ = setup.splits(seed)
    cfg = setup.run_config(seed)
    with threadpool_limits(limits=1):
        model = build_model(cfg)
        run_method(model, pre, cfg, out_dir=out_dir)
        maps = average_attention(model, sample_subset(pre, num_samples, seed), cfg)
    profiles = [lag_profile(m, ON_LAGS + OFF_LAGS) for m in maps]
    scores = [
        (np.mean([p[l] for l in ON_LAGS]) - np.mean([p[l] for l in OFF_LAGS]), i) for i, p in enumerate(profiles)
    ]
    _, best = max(scores)
    p = profiles[best]
    return LagResult(
        seed, best, float(np.mean([p[l] for l in ON_LAGS])), float(np.mean([p[l] for l in OFF_LAGS])), profiles
    )
