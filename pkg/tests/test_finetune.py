import json

import numpy as np
import pytest

from byb.data import ConfigError
from byb.finetune import (
    EvalReport,
    evaluate,
    finetune,
    load_classifier,
    probe_auroc,
    save_classifier,
    score_report,
)
from byb.model import build_model
from byb.metrics import UndefinedMetricError
from helpers import tiny_config

TASK = "category_2d"


def _snapshot(tensors):
    return {k: t.data.copy() for k, t in tensors.items()}


def _same(a, tensors):
    return all(np.array_equal(a[k], t.data) for k, t in tensors.items())


@pytest.mark.parametrize("head", ["mlp", "linear"])
def test_freeze_keeps_encoder_bitwise(head, tiny_data):
    cfg = tiny_config(finetune_epochs=3, probe_steps=20)
    model = build_model(cfg)
    enc, teacher = _snapshot(model.encoder_tensors()), _snapshot(model.teacher_tensors())
    clf = finetune(model, tiny_data, TASK, cfg, mode="freeze", head=head)
    assert _same(enc, model.encoder_tensors()) and _same(teacher, model.teacher_tensors())
    assert clf.num_classes == 5


def test_unfreeze_moves_encoder_but_not_teacher(tiny_data):
    cfg = tiny_config()
    model = build_model(cfg)
    enc, teacher = _snapshot(model.encoder_tensors()), _snapshot(model.teacher_tensors())
    finetune(model, tiny_data, TASK, cfg, mode="unfreeze")
    assert not _same(enc, model.encoder_tensors())
    assert _same(teacher, model.teacher_tensors())


def test_predictor_untouched(tiny_data):
    cfg = tiny_config()
    model = build_model(cfg)
    before = _snapshot(model.predictor.tensors())
    finetune(model, tiny_data, TASK, cfg, mode="unfreeze")
    assert _same(before, model.predictor.tensors())


def test_bad_inputs(tiny_data):
    cfg = tiny_config()
    with pytest.raises(ConfigError):
        finetune(build_model(cfg), tiny_data, "absent", cfg)
    with pytest.raises(ConfigError):
        finetune(build_model(cfg), tiny_data, TASK, cfg, mode="thaw")
    with pytest.raises(ConfigError):
        finetune(build_model(cfg), tiny_data, TASK, cfg, num_classes=2)


@pytest.mark.parametrize("head", ["mlp", "linear"])
def test_classifier_round_trip(head, tiny_data, tmp_path):
    cfg = tiny_config(probe_steps=10)
    clf = finetune(build_model(cfg), tiny_data, TASK, cfg, head=head)
    save_classifier(clf, tmp_path / "clf.bybt")
    back = load_classifier(cfg, tmp_path / "clf.bybt", TASK)
    np.testing.assert_array_equal(back.predict_proba(tiny_data, cfg), clf.predict_proba(tiny_data, cfg))
    with pytest.raises(ConfigError):
        load_classifier(cfg, tmp_path / "clf.bybt", "other")


def test_binary_report_and_files(tiny_data, tmp_path):
    cfg = tiny_config()
    clf = finetune(build_model(cfg), tiny_data, "switch_2d", cfg)
    report = evaluate(clf, tiny_data, cfg)
    assert set(report.metrics) == {"auroc", "ks"}
    assert all(0.0 <= v <= 1.0 for v in report.metrics.values())
    assert 0.0 < report.positive_rate < 1.0
    report.write(tmp_path)
    doc = json.loads((tmp_path / "eval.json").read_text())
    assert doc["n"] == report.n == sum(report.class_histogram.values())
    assert (tmp_path / "eval.csv").read_text().splitlines()[0] == "task,metric,value,n"


def test_multiclass_report():
    proba = np.eye(3)[[0, 1, 2, 1]]
    report = score_report("t", proba, np.array([0, 1, 2, 1]))
    assert report.metrics == {"macro_auroc": 1.0}
    assert report.class_histogram == {0: 1, 1: 2, 2: 1}
    assert report.rows() == [("t", "macro_auroc", 1.0, 4)]
    assert isinstance(report, EvalReport)
    with pytest.raises(UndefinedMetricError):
        score_report("t", proba, np.array([1, 1, 1, 1]))


def test_probe_fits_its_training_set(tiny_data):
    cfg = tiny_config(probe_steps=50)
    score = probe_auroc(build_model(cfg), tiny_data, tiny_data, TASK, cfg)
    assert 0.5 < score <= 1.0
