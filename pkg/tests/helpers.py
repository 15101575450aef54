"""Shared builders, brute-force oracles and the finite-difference gradient check."""

import itertools

import numpy as np

from byb import tensor as T
from byb.config import RunConfig
from byb.data import DAY, GeneratorConfig, UbsSample, bucketize, prediction_events
from byb.encoder import supervision_embedding
from byb.seqmodel import predict
from byb.tensor import Tape, Tensor

REL_TOL = 1e-4
ABS_FLOOR = 1e-8


def tiny_config(**overrides) -> RunConfig:
    base = dict(
        observation_days=8,
        d_model=8,
        ff_dim=8,
        num_layers=1,
        num_heads=2,
        predictor_hidden=8,
        head_hidden=8,
        max_id=49,
        batch_size=8,
        epochs=1,
        lr=1e-2,
    )
    base.update(overrides)
    return RunConfig(**base)


def tiny_generator(**overrides) -> GeneratorConfig:
    base = dict(num_users=24, num_days=8, horizon_days=2, avg_events_per_day=4.0, vocab_size=49, num_categories=5)
    base.update(overrides)
    return GeneratorConfig(**base)


def make_sample(user_id, events, labels=None, max_id=None):
    """events: (day, second-of-day, ids) triples."""
    evs = [(int(day * DAY + sec), tuple(ids)) for day, sec, ids in events]
    return UbsSample.from_events(user_id, evs, labels or {}, max_id)


def grad_check(f, inputs: list[np.ndarray], eps: float = 1e-6):
    """Compare tape gradients of the scalar f(*tensors) against central differences."""
    leaves = [Tensor(x.copy(), requires_grad=True) for x in inputs]
    tape = Tape()
    tape.watch(leaves)
    grads = tape.backward(f(*leaves))
    for i, leaf in enumerate(leaves):
        probe = [Tensor(l.data.copy()) for l in leaves]

        def g(x, i=i, probe=probe):
            args = list(probe)
            args[i] = x
            return f(*args)

        numeric = T.finite_difference_gradient(g, probe[i], eps)
        analytic = grads[leaf]
        diff = np.abs(numeric - analytic)
        err = diff / np.maximum(np.maximum(np.abs(numeric), np.abs(analytic)), ABS_FLOOR)
        ok = (err <= REL_TOL) | (diff <= ABS_FLOOR)
        assert np.all(ok), f"input {i}: max rel err {err[~ok].max():.3g}"


def softmax(x):
    e = np.exp(x - x.max())
    return e / e.sum()


def window_sum_oracle(model, H, sample, cfg):
    """Loop over windows one at a time, straight from the window definitions."""
    plan = cfg.plan
    buckets = bucketize(sample, plan)
    terms = []
    for p in range(plan.num_buckets):
        events = prediction_events(sample, p + 1, plan)
        if not buckets[p] or not events:
            continue
        target, _ = supervision_embedding(model.pair.teacher, events)
        pred = predict(model.predictor, Tensor(H[p])).data
        q = softmax(target.data / cfg.temperature)
        logp = np.log(softmax(pred / cfg.temperature))
        terms.append(-np.sum(q * logp))
    return np.mean(terms), len(terms)


def pairwise_auroc(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    wins = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p, n in itertools.product(pos, neg))
    return wins / (len(pos) * len(neg))


def ecdf_ks(scores, labels):
    scores, labels = np.asarray(scores), np.asarray(labels)
    best = 0.0
    for t in scores:
        fp = np.mean(scores[labels == 1] <= t)
        fn = np.mean(scores[labels == 0] <= t)
        best = max(best, abs(fp - fn))
    return best
