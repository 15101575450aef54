import math

import numpy as np
import pytest

from byb import tensor as T
from byb.data import BehaviorEvent
from byb.encoder import (
    EncoderPair,
    StateCorruptionError,
    ema_update,
    encode_behavior,
    encode_events,
    hash_ids,
    init_encoder,
    pool_embeddings,
    supervision_embedding,
)
from byb.tensor import Tape, Tensor


def _randomized(seed=0, d=6, max_id=20, max_ids=3):
    p = init_encoder(d, max_id, max_ids, seed)
    rng = np.random.default_rng(seed + 100)
    p.b1.data[...] = rng.normal(size=d)
    p.b2.data[...] = rng.normal(size=1)
    return p


def scalar_merge(p, ids):
    """Loop-by-loop evaluation of the gated merge."""
    d = p.dim
    E, W1, b1, W2, b2, P = (p.embedding.data, p.w1.data, p.b1.data, p.w2.data, p.b2.data, p.positions)
    out = [0.0] * d
    for j, i in enumerate(ids):
        h = [E[i][c] + P[j][c] for c in range(d)]
        z = sum(W2[0][c] * h[c] for c in range(d)) + b2[0]
        gate = 1.0 / (1.0 + math.exp(-z))
        for r in range(d):
            out[r] += gate * (sum(W1[r][c] * h[c] for c in range(d)) + b1[r])
    return np.array(out)


def test_gated_merge_matches_scalar_loop():
    p = _randomized()
    for ids in ([3], [7, 0], [20, 4, 4]):
        np.testing.assert_allclose(encode_behavior(p, ids).data, scalar_merge(p, ids), atol=1e-12)


def test_identity_merge_with_zero_gate_weights():
    p = _randomized(d=4)
    p.w1.data[...] = np.eye(4)
    p.b1.data[...] = 0
    p.w2.data[...] = 0
    p.b2.data[...] = 0
    ids = [1, 5]
    expect = 0.5 * sum(p.embedding.data[i] + p.positions[j] for j, i in enumerate(ids))
    np.testing.assert_allclose(encode_behavior(p, ids).data, expect, atol=1e-14)


def test_order_matters_only_through_slot_positions():
    p = _randomized()
    a, b = encode_behavior(p, [1, 2, 3]).data, encode_behavior(p, [3, 1, 2]).data
    assert not np.allclose(a, b)
    p.positions[...] = 0
    np.testing.assert_allclose(encode_behavior(p, [1, 2, 3]).data, encode_behavior(p, [3, 1, 2]).data, atol=1e-12)


def test_batched_path_matches_single_events():
    p = _randomized()
    events = [[1], [2, 9, 9], [20, 0]]
    ids = np.concatenate(events)
    slots = np.concatenate([np.arange(len(e)) for e in events])
    owner = np.repeat(np.arange(len(events)), [len(e) for e in events])
    out = encode_events(p, ids, slots, owner, len(events)).data
    for row, ev in zip(out, events):
        np.testing.assert_allclose(row, encode_behavior(p, ev).data, atol=1e-12)


def test_bounds_and_length_errors():
    p = _randomized()
    with pytest.raises(IndexError):
        encode_behavior(p, [21])
    with pytest.raises(ValueError):
        encode_behavior(p, [1, 2, 3, 4])
    with pytest.raises(ValueError):
        encode_behavior(p, [])
    np.testing.assert_array_equal(hash_ids([21, 43, 5], 20), [0, 1, 5])


def test_pooling_conventions():
    v = Tensor(np.array([1.0, -2.0, 3.0]))
    pooled, ok = pool_embeddings([v])
    assert ok and np.array_equal(pooled.data, v.data)
    pooled, ok = pool_embeddings([v, T.scale(v, -1.0)])
    assert ok and np.array_equal(pooled.data, np.zeros(3))
    pooled, ok = pool_embeddings([], dim=3)
    assert not ok and np.array_equal(pooled.data, np.zeros(3))


def test_supervision_is_detached_pooled_teacher_encoding():
    pair = EncoderPair.from_student(_randomized())
    events = [BehaviorEvent(0, (1, 2)), BehaviorEvent(5, (7,))]
    target, ok = supervision_embedding(pair.teacher, events)
    ref, _ = pool_embeddings([encode_behavior(pair.teacher, ev.ids) for ev in events])
    assert ok
    np.testing.assert_allclose(target.data, ref.data, atol=1e-14)
    assert not target.requires_grad


def test_no_gradient_reaches_teacher_through_target():
    pair = EncoderPair.from_student(_randomized())
    # give the teacher a tape-visible copy to prove the path is cut
    for t in pair.teacher.tensors().values():
        t.requires_grad = True
    tape = Tape()
    tape.watch(pair.teacher.tensors().values(), pair.student.tensors().values())
    target, _ = supervision_embedding(pair.teacher, [BehaviorEvent(0, (3, 4))])
    pred = encode_behavior(pair.student, [3, 4])
    grads = tape.backward(T.sum_(T.mul(pred, target)))
    for t in pair.teacher.tensors().values():
        assert np.all(grads[t] == 0.0)
    assert np.any(grads[pair.student.embedding] != 0.0)


def test_teacher_starts_as_frozen_copy():
    pair = EncoderPair.from_student(init_encoder(4, 9, 3, 1))
    for name, t in pair.teacher.tensors().items():
        s = pair.student.tensors()[name]
        assert np.array_equal(t.data, s.data) and t is not s
        assert not t.requires_grad


def test_init_is_deterministic_per_seed():
    a, b, c = init_encoder(4, 9, 3, 5), init_encoder(4, 9, 3, 5), init_encoder(4, 9, 3, 6)
    assert all(np.array_equal(a.tensors()[k].data, b.tensors()[k].data) for k in a.tensors())
    assert not np.array_equal(a.embedding.data, c.embedding.data)
    assert a.embedding.shape == (10, 4) and a.w2.shape == (1, 4) and a.b2.shape == (1,)


def _scalar_pair(m):
    student = init_encoder(1, 1, 1, 0)
    pair = EncoderPair.from_student(student, m)
    for t in pair.teacher.tensors().values():
        t.data[...] = 1.0
    for t in pair.student.tensors().values():
        t.data[...] = 0.0
    return pair


@pytest.mark.parametrize("m,expect", [(0.995, 0.995), (1.0, 1.0), (0.0, 0.0)])
def test_ema_scalar_cases(m, expect):
    pair = _scalar_pair(m)
    ema_update(pair)
    for t in pair.teacher.tensors().values():
        np.testing.assert_allclose(t.data, expect, rtol=0, atol=1e-15)
    for t in pair.student.tensors().values():
        assert np.all(t.data == 0.0)


def test_ema_shape_mismatch():
    pair = EncoderPair.from_student(init_encoder(4, 9, 3, 0))
    pair.teacher.w1 = Tensor(np.zeros((3, 3)))
    with pytest.raises(StateCorruptionError):
        ema_update(pair)


def test_pair_rejects_bad_momentum():
    with pytest.raises(ValueError):
        EncoderPair.from_student(init_encoder(4, 9, 3, 0), 1.5)
