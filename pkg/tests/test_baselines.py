import numpy as np
import pytest

from byb import tensor as T
from byb.baselines import (
    cts_pretrain,
    info_nce,
    labeled_subset,
    mbm_pretrain,
    msdp_pretrain,
    msdp_vocabulary,
    nbp_loss,
    nbp_pretrain,
    next_behavior_targets,
    presence_targets,
    run_method,
    sample_day_mask,
    shuffle_within_days,
    supervised_train,
)
from byb.data import ConfigError, bucketize, prediction_events
from byb.model import build_model, make_batch, pooled_inputs
from byb.seqmodel import encode_sequence
from byb.tensor import Tape, Tensor
from helpers import make_sample, tiny_config


def _gappy():
    return make_sample("g", [(0, 1, [4, 1]), (0, 9, [2]), (2, 3, [7]), (5, 0, [9, 9]), (5, 4, [3])], max_id=49)


def test_next_behavior_targets():
    cfg = tiny_config()
    batch = make_batch(cfg, [_gappy()], with_targets=False)
    # valid days 0, 2, 5; each points at the first id of the next non-empty day
    expect = np.full(8, -1)
    expect[[0, 2]] = [7, 9]
    np.testing.assert_array_equal(next_behavior_targets(batch)[0], expect)


def test_nbp_loss_matches_per_position_sum():
    rng = np.random.default_rng(0)
    H = Tensor(rng.normal(size=(2, 4, 3)))
    w, b = Tensor(rng.normal(size=(3, 6))), Tensor(rng.normal(size=6))
    targets = np.array([[2, -1, 5, -1], [-1, 0, -1, -1]])
    terms = []
    for i, k in zip(*np.nonzero(targets >= 0)):
        z = H.data[i, k] @ w.data + b.data
        terms.append(np.log(np.exp(z).sum()) - z[targets[i, k]])
    assert nbp_loss(H, targets, w, b).item() == pytest.approx(np.mean(terms), abs=1e-12)
    assert nbp_loss(H, np.full((2, 4), -1), w, b) is None


def test_nbp_learns_a_single_class_stream():
    cfg = tiny_config(lr=3e-2, epochs=20, batch_size=4)
    data = [make_sample(f"u{u}", [(d, 5 + u, [3]) for d in range(8)], max_id=49) for u in range(8)]
    model = build_model(cfg)
    records = nbp_pretrain(model, data, cfg)
    assert records[-1]["loss"] < 0.05
    batch = make_batch(cfg, data, with_targets=False)
    H = encode_sequence(model.seq, pooled_inputs(model, batch), batch.valid).data
    logits = H @ model.extra["nbp.w"].data + model.extra["nbp.b"].data
    assert np.all(logits[:, :-1].argmax(axis=-1) == 3)


def test_mask_ratio_sampling():
    rng = np.random.default_rng(0)
    valid = np.ones((2000, 30), dtype=bool)
    for ratio in (0.1, 0.2):
        mask = sample_day_mask(valid, ratio, rng)
        assert abs(mask.sum(axis=1).mean() - ratio * 30) <= 0.1 * ratio * 30
    short = np.zeros((3, 5), dtype=bool)
    short[:, 2] = True
    assert np.array_equal(sample_day_mask(short, 0.1, rng), short)
    with pytest.raises(ConfigError):
        sample_day_mask(valid, 0.0, rng)


def test_mbm_rejects_zero_ratio(tiny_data):
    with pytest.raises(ConfigError):
        mbm_pretrain(build_model(tiny_config()), tiny_data, tiny_config(), 0.0)


def test_info_nce_matches_direct_evaluation():
    rng = np.random.default_rng(1)
    z1, z2 = rng.normal(size=(5, 4)), rng.normal(size=(5, 4))
    a = z1 / np.linalg.norm(z1, axis=1, keepdims=True)
    b = z2 / np.linalg.norm(z2, axis=1, keepdims=True)
    total = 0.0
    for i in range(5):
        sims = np.array([a[i] @ b[j] for j in range(5)]) / 0.1
        total += -sims[i] + np.log(np.exp(sims).sum())
    got = info_nce(Tensor(z1), Tensor(z2), 0.1).item()
    assert got == pytest.approx(total / 5, abs=1e-12)
    assert got >= 0
    with pytest.raises(ValueError):
        info_nce(Tensor(z1[:1]), Tensor(z2[:1]))


def test_within_day_shuffle_keeps_days_and_pools():
    s = _gappy()
    cfg = tiny_config()
    view = shuffle_within_days(s, cfg.plan, np.random.default_rng(3))
    assert np.array_equal(view.timestamps, s.timestamps)
    for a, b in zip(bucketize(s, cfg.plan), bucketize(view, cfg.plan)):
        assert sorted(ev.ids for ev in a) == sorted(ev.ids for ev in b)
    model = build_model(cfg)
    x = pooled_inputs(model, make_batch(cfg, [s], with_targets=False)).data
    y = pooled_inputs(model, make_batch(cfg, [view], with_targets=False)).data
    np.testing.assert_allclose(x, y, atol=1e-12)


def test_msdp_vocabulary_and_presence():
    s = _gappy()
    assert list(msdp_vocabulary([s], 3)) == [2, 3, 4]
    assert len(msdp_vocabulary([s], 99)) == 5
    with pytest.raises(ConfigError):
        msdp_vocabulary([s], 0)
    cfg = tiny_config()
    vocab = np.array([7, 9, 3, 4])
    got = presence_targets(make_batch(cfg, [s]), vocab)[0]
    for p in range(cfg.plan.num_buckets):
        firsts = {ev.ids[0] for ev in prediction_events(s, p + 1, cfg.plan)}
        np.testing.assert_array_equal(got[p], [float(v in firsts) for v in vocab])


def test_msdp_vocab_is_not_trained(tiny_data):
    cfg = tiny_config(msdp_vocab=10)
    model = build_model(cfg)
    msdp_pretrain(model, tiny_data, cfg)
    assert not model.extra["msdp.vocab"].requires_grad
    assert len(model.extra["msdp.vocab"].data) == 10


def test_supervised_gives_every_parameter_a_gradient(tiny_data):
    cfg = tiny_config(method="supervised")
    model = build_model(cfg)
    captured = {}
    original = T.Tape.backward

    def spy(self, loss):
        grads = original(self, loss)
        captured.update(grads)
        return grads

    T.Tape.backward = spy
    try:
        supervised_train(model, tiny_data, "category_2d", cfg)
    finally:
        T.Tape.backward = original
    for name, t in model.trainable().items():
        assert np.any(captured[t] != 0.0), name


def test_missing_task_is_config_error(tiny_data):
    with pytest.raises(ConfigError):
        labeled_subset(tiny_data, "nope")
    with pytest.raises(ConfigError):
        labeled_subset(tiny_data, "")


@pytest.mark.parametrize("method", ["nbp", "mbm1", "mbm2", "cts", "msdp", "supervised"])
def test_every_method_trains_and_is_deterministic(method, tiny_data, tmp_path):
    cfg = tiny_config(method=method, task="category_2d", msdp_vocab=20)
    run_method(build_model(cfg), tiny_data, cfg, out_dir=tmp_path / "a")
    model = build_model(cfg)
    records = run_method(model, tiny_data, cfg, out_dir=tmp_path / "b")
    assert (tmp_path / "a" / "metrics.csv").read_text() == (tmp_path / "b" / "metrics.csv").read_text()
    assert any(np.isfinite(r["loss"]) for r in records)
    # shared prefixes load into a plain model
    fresh = build_model(tiny_config())
    fresh.load_state(model.state())
    assert np.array_equal(fresh.pair.student.embedding.data, model.pair.student.embedding.data)


def test_cts_skips_single_user_batch():
    cfg = tiny_config(batch_size=2)
    data = [_gappy(), make_sample("h", [(1, 1, [5])], max_id=49), make_sample("i", [(3, 1, [6])], max_id=49)]
    records = cts_pretrain(build_model(cfg), data, cfg)
    assert sum(np.isnan(r["loss"]) for r in records) == 1
