"""User behavior sequences: data model, JSONL I/O, synthetic generator, windowing."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

DAY = 86_400


class ValidationError(ValueError):
    pass


class DataFormatError(ValueError):
    pass


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class BehaviorEvent:
    timestamp: int
    ids: tuple[int, ...]


class UbsSample:
    """One user's behavior sequence, stored as flat arrays.

    ``timestamps[j]`` is the time of event j and its ids are
    ``flat_ids[offsets[j]:offsets[j + 1]]``.
    """

    __slots__ = ("user_id", "timestamps", "offsets", "flat_ids", "labels")

    def __init__(
        self,
        user_id: str,
        timestamps: np.ndarray,
        offsets: np.ndarray,
        flat_ids: np.ndarray,
        labels: dict[str, int] | None = None,
    ):
        self.user_id = str(user_id)
        self.timestamps = np.asarray(timestamps, dtype=np.int64)
        self.offsets = np.asarray(offsets, dtype=np.int64)
        self.flat_ids = np.asarray(flat_ids, dtype=np.int64)
        self.labels = dict(labels or {})

    @classmethod
    def from_events(
        cls,
        user_id: str,
        events: Iterable[BehaviorEvent | tuple],
        labels: dict[str, int] | None = None,
        max_id: int | None = None,
    ) -> "UbsSample":
        ts, lens, ids = [], [], []
        for ev in events:
            t, ev_ids = (ev.timestamp, ev.ids) if isinstance(ev, BehaviorEvent) else ev
            ts.append(int(t))
            lens.append(len(ev_ids))
            ids.extend(int(i) for i in ev_ids)
        offsets = np.zeros(len(ts) + 1, dtype=np.int64)
        np.cumsum(lens, out=offsets[1:])
        sample = cls(user_id, np.array(ts, dtype=np.int64), offsets, np.array(ids, dtype=np.int64), labels)
        sample.validate(max_id)
        return sample

    def validate(self, max_id: int | None = None) -> None:
        n = len(self.timestamps)
        if n == 0:
            raise ValidationError(f"user {self.user_id}: empty event list")
        if self.offsets.shape != (n + 1,) or self.offsets[0] != 0 or self.offsets[-1] != len(self.flat_ids):
            raise ValidationError(f"user {self.user_id}: inconsistent id offsets")
        if np.any(np.diff(self.offsets) < 1):
            raise ValidationError(f"user {self.user_id}: every event needs at least one id")
        if self.timestamps[0] < 0:
            raise ValidationError(f"user {self.user_id}: negative timestamp")
        if np.any(np.diff(self.timestamps) < 0):
            j = int(np.argmax(np.diff(self.timestamps) < 0))
            raise ValidationError(
                f"user {self.user_id}: timestamps decrease at event {j + 1} "
                f"({self.timestamps[j]} -> {self.timestamps[j + 1]})"
            )
        if self.flat_ids.min() < 0:
            raise ValidationError(f"user {self.user_id}: negative id")
        if max_id is not None and self.flat_ids.max() > max_id:
            raise ValidationError(f"user {self.user_id}: id {self.flat_ids.max()} exceeds max id {max_id}")

    def __len__(self) -> int:
        return len(self.timestamps)

    def ids_of(self, j: int) -> tuple[int, ...]:
        return tuple(int(i) for i in self.flat_ids[self.offsets[j] : self.offsets[j + 1]])

    @property
    def events(self) -> list[BehaviorEvent]:
        return [BehaviorEvent(int(self.timestamps[j]), self.ids_of(j)) for j in range(len(self))]

    @property
    def first_ids(self) -> np.ndarray:
        return self.flat_ids[self.offsets[:-1]]

    def __eq__(self, other) -> bool:
        if not isinstance(other, UbsSample):
            return NotImplemented
        return (
            self.user_id == other.user_id
            and np.array_equal(self.timestamps, other.timestamps)
            and np.array_equal(self.offsets, other.offsets)
            and np.array_equal(self.flat_ids, other.flat_ids)
            and self.labels == other.labels
        )

    def __repr__(self) -> str:
        return f"UbsSample(user_id={self.user_id!r}, n={len(self)}, labels={self.labels})"


@dataclass(frozen=True)
class WindowPlan:
    observation_seconds: int
    pool_window_seconds: int = DAY
    prediction_window_seconds: int = DAY

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) <= 0:
                raise ConfigError(f"{f.name} must be positive")
        if self.observation_seconds % self.pool_window_seconds:
            raise ConfigError("observation window must be divisible by the pooling window")

    @property
    def num_buckets(self) -> int:
        return self.observation_seconds // self.pool_window_seconds

    @classmethod
    def days(cls, observation_days: int, pool_days: int = 1, prediction_days: int = 1) -> "WindowPlan":
        return cls(observation_days * DAY, pool_days * DAY, prediction_days * DAY)


def bucket_index(timestamps: np.ndarray, plan: WindowPlan) -> np.ndarray:
    """Bucket of each timestamp, or -1 when it falls at or after T."""
    ts = np.asarray(timestamps, dtype=np.int64)
    return np.where(ts < plan.observation_seconds, ts // plan.pool_window_seconds, -1)


def bucketize(sample: UbsSample, plan: WindowPlan) -> list[list[BehaviorEvent]]:
    """Events grouped into the T/ΔT1 half-open pooling windows; empties kept."""
    buckets: list[list[BehaviorEvent]] = [[] for _ in range(plan.num_buckets)]
    for j, b in enumerate(bucket_index(sample.timestamps, plan)):
        if b >= 0:
            buckets[b].append(BehaviorEvent(int(sample.timestamps[j]), sample.ids_of(j)))
    return buckets


def prediction_events(sample: UbsSample, k: int, plan: WindowPlan) -> list[BehaviorEvent]:
    """Events in [kΔT1, kΔT1 + ΔT2) for window k in 1..T/ΔT1."""
    if not 1 <= k <= plan.num_buckets:
        raise IndexError(f"window index {k} outside 1..{plan.num_buckets}")
    start = k * plan.pool_window_seconds
    lo, hi = np.searchsorted(sample.timestamps, [start, start + plan.prediction_window_seconds])
    return [BehaviorEvent(int(sample.timestamps[j]), sample.ids_of(j)) for j in range(lo, hi)]


def observation_length(sample: UbsSample, plan: WindowPlan) -> int:
    return int(np.searchsorted(sample.timestamps, plan.observation_seconds))


def derive_label(
    sample: UbsSample, horizon_start: int, horizon_seconds: int, category_of: np.ndarray
) -> int | None:
    """Modal category of first ids in the horizon; smallest index wins ties.

    Returns None when the horizon holds no events.
    """
    lo, hi = np.searchsorted(sample.timestamps, [horizon_start, horizon_start + horizon_seconds])
    if hi <= lo:
        return None
    cats = category_of[sample.first_ids[lo:hi]]
    return int(np.argmax(np.bincount(cats)))


# ------------------------------------------------------------------ generator


@dataclass
class GeneratorConfig:
    num_users: int = 1000
    num_days: int = 60
    horizon_days: int = 5
    avg_events_per_day: float = 20.0
    vocab_size: int = 999
    num_categories: int = 10
    ids_min: int = 1
    ids_max: int = 3
    periodicity_strength: float = 0.0
    drift_strength: float = 0.0
    preference_scale: float = 1.5
    seed: int = 0

    def validate(self) -> None:
        for name in ("num_users", "num_days", "horizon_days", "vocab_size", "num_categories", "ids_min"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.avg_events_per_day <= 0:
            raise ConfigError("avg_events_per_day must be positive")
        if self.ids_max < self.ids_min:
            raise ConfigError("ids_max must be >= ids_min")
        for name in ("periodicity_strength", "drift_strength"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1]")
        if self.vocab_size + 1 < self.num_categories:
            raise ConfigError("vocabulary smaller than the number of categories")

    @property
    def plan(self) -> WindowPlan:
        return WindowPlan.days(self.num_days)

    @property
    def task(self) -> str:
        return f"category_{self.horizon_days}d"


def category_map(vocab_size: int, num_categories: int) -> np.ndarray:
    """Category of every id 0..vocab_size, as contiguous equal blocks."""
    block = (vocab_size + 1) // num_categories
    return np.minimum(np.arange(vocab_size + 1) // block, num_categories - 1)


def _generate_user(cfg: GeneratorConfig, u: int, cdf_items: np.ndarray, block: int) -> UbsSample:
    rng = np.random.default_rng((cfg.seed, u))
    C, D = cfg.num_categories, cfg.num_days + cfg.horizon_days
    base = rng.normal(size=C) * cfg.preference_scale
    target = rng.normal(size=C) * cfg.preference_scale
    while C > 1 and np.argmax(target) == np.argmax(base):
        target = rng.permutation(target)
    weekly = rng.normal(size=(7, C)) * cfg.preference_scale
    phase = int(rng.integers(7))

    days = np.arange(D)
    frac = days / max(D - 1, 1)
    logits = (
        base[None, :]
        + cfg.drift_strength * frac[:, None] * (target - base)[None, :]
        + cfg.periodicity_strength * weekly[(days + phase) % 7]
    )
    probs = np.exp(logits - logits.max(axis=1, keepdims=True))
    probs /= probs.sum(axis=1, keepdims=True)

    counts = rng.poisson(cfg.avg_events_per_day, size=D)
    day_of = np.repeat(days, counts)
    n = len(day_of)
    if n == 0:
        # keep the non-empty contract: one event on a random day
        day_of = rng.integers(D, size=1)
        n = 1
    cdf = np.cumsum(probs, axis=1)
    cats = np.minimum((rng.random(n)[:, None] > cdf[day_of]).sum(axis=1), C - 1)
    seconds = rng.integers(0, DAY, size=n)
    times = day_of * DAY + seconds
    order = np.argsort(times, kind="stable")
    times, cats = times[order], cats[order]

    m = rng.integers(cfg.ids_min, cfg.ids_max + 1, size=n)
    offsets = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(m, out=offsets[1:])
    ranks = np.minimum(np.searchsorted(cdf_items, rng.random(offsets[-1]), side="right"), block - 1)
    flat = np.repeat(cats, m) * block + ranks
    return UbsSample(f"u{u:06d}", times, offsets, flat)


def generate_synthetic(cfg: GeneratorConfig) -> list[UbsSample]:
    """Users with drifting, weekly-periodic category preferences.

    Every user has a base and a drift-target preference over categories and a
    7-day modulation table; daily counts are Poisson and within-day order is
    random. Labels are the modal category of the horizon after the
    observation window (plus a binary "switch" task: does it differ from the
    observed modal category).
    """
    cfg.validate()
    block = (cfg.vocab_size + 1) // cfg.num_categories
    pop = 1.0 / np.arange(1, block + 1)
    cdf_items = np.cumsum(pop / pop.sum())
    cat_of = category_map(cfg.vocab_size, cfg.num_categories)
    T = cfg.num_days * DAY
    H = cfg.horizon_days * DAY
    out = []
    for u in range(cfg.num_users):
        s = _generate_user(cfg, u, cdf_items, block)
        future = derive_label(s, T, H, cat_of)
        past = derive_label(s, 0, T, cat_of)
        if future is not None:
            s.labels[cfg.task] = future
            if past is not None:
                s.labels[f"switch_{cfg.horizon_days}d"] = int(future != past)
        out.append(s)
    return out


# ------------------------------------------------------------------ JSONL


def write_jsonl(dataset: Sequence[UbsSample], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in dataset:
            events = [
                [int(s.timestamps[j]), s.flat_ids[s.offsets[j] : s.offsets[j + 1]].tolist()]
                for j in range(len(s))
            ]
            rec = {"user_id": s.user_id, "events": events, "labels": s.labels}
            fh.write(json.dumps(rec, separators=(",", ":")))
            fh.write("\n")


def iter_jsonl(path: str | Path, max_id: int | None = None) -> Iterator[UbsSample]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                events = [(int(t), [int(i) for i in ids]) for t, ids in rec["events"]]
                labels = {str(k): int(v) for k, v in rec.get("labels", {}).items()}
                user_id = rec["user_id"]
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise DataFormatError(f"{path}:{lineno}: malformed record ({exc})") from exc
            try:
                yield UbsSample.from_events(user_id, events, labels, max_id=max_id)
            except ValidationError as exc:
                raise ValidationError(f"{path}:{lineno}: {exc}") from exc


def read_jsonl(path: str | Path, max_id: int | None = None) -> list[UbsSample]:
    return list(iter_jsonl(path, max_id=max_id))


def split_dataset(dataset: Sequence[UbsSample], sizes: Sequence[int]) -> list[list[UbsSample]]:
    """Consecutive slices of the given sizes."""
    if sum(sizes) > len(dataset):
        raise ConfigError(f"split sizes {list(sizes)} exceed dataset size {len(dataset)}")
    out, pos = [], 0
    for n in sizes:
        out.append(list(dataset[pos : pos + n]))
        pos += n
    return out


def load_generator_config(path: str | Path) -> GeneratorConfig:
    """Read a flat ``key = value`` file into a GeneratorConfig."""
    from byb.config import parse_kv_file, coerce_into

    return coerce_into(GeneratorConfig, parse_kv_file(path))


def mean_length(dataset: Sequence[UbsSample], plan: WindowPlan) -> float:
    return float(np.mean([observation_length(s, plan) for s in dataset])) if dataset else math.nan
