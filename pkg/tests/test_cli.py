import json
import subprocess
import sys

import pytest

from byb.cli import main

SMALL = ["--observation-days", "8", "--dim", "8", "--ff", "8", "--layers", "1", "--heads", "2",
         "--predictor-hidden", "8", "--head-hidden", "8", "--max-id", "49", "--batch-size", "8", "--epochs", "1"]


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("gen")
    args = ["generate", "--num-users", "24", "--num-days", "8", "--horizon-days", "2", "--events-per-day", "4",
            "--vocab-size", "49", "--num-categories", "5", "--seed", "3", "--out-dir", str(out)]
    assert main(args) == 0
    return out / "data.jsonl"


def test_generate_is_deterministic(dataset, tmp_path):
    args = ["generate", "--num-users", "24", "--num-days", "8", "--horizon-days", "2", "--events-per-day", "4",
            "--vocab-size", "49", "--num-categories", "5", "--seed", "3", "--out-dir", str(tmp_path)]
    assert main(args) == 0
    assert (tmp_path / "data.jsonl").read_bytes() == dataset.read_bytes()
    assert json.loads((tmp_path / "manifest.json").read_text())["num_samples"] == 24


def test_count_params_preset(tmp_path, capsys):
    assert main(["count-params", "--preset", "base", "--out-dir", str(tmp_path)]) == 0
    assert json.loads(capsys.readouterr().out)["total"] == 395_264


@pytest.mark.parametrize(
    "argv",
    [
        ["count-params", "--preset", "base", "--layers", "6"],
        ["count-params", "--bogus-flag", "1"],
        ["count-params", "--method", "nope"],
        ["pretrain", "--config", "/nonexistent.cfg"],
        ["pretrain"],
    ],
)
def test_usage_errors_exit_2(argv, tmp_path):
    assert main(argv + ["--out-dir", str(tmp_path)]) == 2


def test_pretrain_finetune_eval_chain(dataset, tmp_path):
    pre = tmp_path / "pre"
    assert main(["pretrain", "--data", str(dataset), "--out-dir", str(pre)] + SMALL) == 0
    assert (pre / "checkpoint.bybt").exists() and (pre / "metrics.csv").exists()
    ft = tmp_path / "ft"
    args = ["finetune", "--checkpoint", str(pre / "checkpoint.bybt"), "--finetune-data", str(dataset),
            "--test-data", str(dataset), "--task", "category_2d", "--out-dir", str(ft)] + SMALL
    assert main(args) == 0
    assert json.loads((ft / "eval.json").read_text())["task"] == "category_2d"
    ev = tmp_path / "ev"
    args = ["eval", "--checkpoint", str(ft / "finetuned.bybt"), "--test-data", str(dataset),
            "--task", "category_2d", "--out-dir", str(ev)] + SMALL
    assert main(args) == 0
    assert (ev / "eval.json").read_text() == (ft / "eval.json").read_text()


def test_missing_head_is_runtime_error(dataset, tmp_path):
    assert main(["pretrain", "--data", str(dataset), "--out-dir", str(tmp_path)] + SMALL) == 0
    args = ["eval", "--checkpoint", str(tmp_path / "checkpoint.bybt"), "--test-data", str(dataset),
            "--task", "category_2d", "--out-dir", str(tmp_path / "ev")] + SMALL
    assert main(args) == 1


def test_manifest_reruns_identically(dataset, tmp_path):
    first = tmp_path / "a"
    assert main(["pretrain", "--data", str(dataset), "--out-dir", str(first), "--no-ema"] + SMALL) == 0
    manifest = json.loads((first / "manifest.json").read_text())
    assert manifest["config"]["m_ema"] == 0.0
    second = tmp_path / "b"
    assert main(["pretrain", "--config", str(first / "manifest.json"), "--out-dir", str(second)]) == 0
    assert (first / "metrics.csv").read_text() == (second / "metrics.csv").read_text()


def test_config_file_with_flag_override(dataset, tmp_path):
    cfg_file = tmp_path / "run.cfg"
    cfg_file.write_text("\n".join(["d_model = 8", "ff_dim = 8", "num_layers = 1", "num_heads = 2", "max_id = 49",
                                   "observation_days = 8", "predictor_hidden = 16", "epochs = 1"]))
    out = tmp_path / "out"
    assert main(["pretrain", "--config", str(cfg_file), "--data", str(dataset), "--predictor-hidden", "8",
                 "--out-dir", str(out)]) == 0
    assert json.loads((out / "manifest.json").read_text())["config"]["predictor_hidden"] == 8


def test_exports_and_bench(dataset, tmp_path):
    base = ["--data", str(dataset), "--num-samples", "5"] + SMALL
    assert main(["export-emb", "--out-dir", str(tmp_path / "e")] + base) == 0
    assert len((tmp_path / "e" / "embeddings.csv").read_text().splitlines()) == 6
    assert main(["attn", "--out-dir", str(tmp_path / "a")] + base) == 0
    assert (tmp_path / "a" / "attn_layer0.csv").exists()
    bench = ["bench", "--out-dir", str(tmp_path / "b"), "--data", str(dataset), "--bench-steps", "1"] + SMALL
    bench[bench.index("--batch-size") + 1] = "2"
    assert main(bench) == 0
    assert json.loads((tmp_path / "b" / "bench.json").read_text())["samples_per_second"] > 0


def test_console_entry_point(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "byb.cli", "count-params", "--preset", "base_x2", "--out-dir", str(tmp_path)],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["total"] == 790_528
