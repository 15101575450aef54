"""``byb`` command line: generate, pretrain, finetune, eval, bench, attn, export-emb, count-params.

Settings come from an optional flat ``key = value`` file (``--config``) and
are overridden by flags. Every subcommand writes ``manifest.json`` into
``--out-dir``. Usage errors exit 2, runtime failures exit 1.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from byb.baselines import run_method
from byb.bench import bench, export_attention, export_embeddings
from byb.config import RunConfig, coerce_into, parse_kv_file, write_manifest
from byb.data import ConfigError, DataFormatError, GeneratorConfig, ValidationError, generate_synthetic, read_jsonl, write_jsonl
from byb.finetune import evaluate, finetune, load_classifier, save_classifier
from byb.metrics import UndefinedMetricError
from byb.model import build_model, load_model
from byb.seqmodel import count_params

log = logging.getLogger("byb")

COMMANDS = ("generate", "pretrain", "finetune", "eval", "bench", "attn", "export-emb", "count-params")

# short spellings accepted in addition to --<field-name>
ALIASES = {
    "layers": "num_layers",
    "heads": "num_heads",
    "ff": "ff_dim",
    "dim": "d_model",
    "events_per_day": "avg_events_per_day",
    "periodicity": "periodicity_strength",
    "drift": "drift_strength",
}
EXPLICIT_DIMS = ("d_model", "ff_dim", "num_layers")


class UsageError(Exception):
    pass


def _add_fields(parser: argparse.ArgumentParser, cls, skip=()) -> None:
    for f in dataclasses.fields(cls):
        if f.name in skip:
            continue
        names = ["--" + f.name.replace("_", "-")]
        names += ["--" + a.replace("_", "-") for a, target in ALIASES.items() if target == f.name]
        parser.add_argument(*names, dest=f.name, default=argparse.SUPPRESS, metavar=f.name.upper())


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="byb", description="Behavior sequence pretraining toolkit")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="flat key = value file; flags override it")
        if name == "generate":
            _add_fields(p, GeneratorConfig)
            p.add_argument("--out-dir", dest="out_dir", default=argparse.SUPPRESS)
            p.add_argument("--output", default=None, help="dataset path (default <out-dir>/data.jsonl)")
            continue
        _add_fields(p, RunConfig)
        p.add_argument("--no-ema", dest="no_ema", action="store_true", help="teacher copies the student every step")
        p.add_argument("--no-predictor", dest="no_predictor", action="store_true")
    return parser


def _split_args(ns: argparse.Namespace) -> dict[str, str]:
    skip = {"command", "config", "verbose", "no_ema", "no_predictor", "output"}
    return {k: v for k, v in vars(ns).items() if k not in skip}


def resolve_config(ns: argparse.Namespace, cls=RunConfig):
    """File values first, then flags; checks preset/explicit-dim exclusivity."""
    values: dict = {}
    if ns.config and not Path(ns.config).exists():
        raise UsageError(f"config file not found: {ns.config}")
    if ns.config and ns.config.endswith(".json"):
        # a run manifest: its config block reproduces the run
        values.update(json.loads(Path(ns.config).read_text(encoding="utf-8"))["config"])
        if values.get("preset"):
            for k in EXPLICIT_DIMS:
                values.pop(k, None)
    elif ns.config:
        values.update(parse_kv_file(ns.config))
    flags = _split_args(ns)
    out_dir = flags.pop("out_dir", None) if cls is GeneratorConfig else None
    values.update(flags)
    if cls is GeneratorConfig:
        values.pop("out_dir", None)
    if cls is RunConfig:
        if getattr(ns, "no_ema", False):
            values["m_ema"] = "0"
        if getattr(ns, "no_predictor", False):
            values["use_predictor"] = "false"
        if values.get("preset") and any(k in values for k in EXPLICIT_DIMS):
            raise UsageError("--preset cannot be combined with explicit dimensions (" + ", ".join(EXPLICIT_DIMS) + ")")
    try:
        cfg = coerce_into(cls, values)
        cfg.validate()
    except ConfigError as exc:
        raise UsageError(str(exc)) from exc
    return cfg, out_dir


def _require(path: str, what: str) -> Path:
    if not path:
        raise UsageError(f"--{what.replace('_', '-')} is required")
    p = Path(path)
    if not p.exists():
        raise UsageError(f"{what} file not found: {path}")
    return p


def _load(cfg: RunConfig, path: str):
    return read_jsonl(path, max_id=None if cfg.hash_overflow else cfg.max_id)


def cmd_generate(ns, cfg: GeneratorConfig, out_dir: str | None) -> dict:
    out = Path(out_dir or "runs/data")
    out.mkdir(parents=True, exist_ok=True)
    target = Path(ns.output) if ns.output else out / "data.jsonl"
    data = generate_synthetic(cfg)
    write_jsonl(data, target)
    write_manifest(out / "manifest.json", "generate", cfg, {"output": str(target), "num_samples": len(data)})
    return {"output": str(target), "num_samples": len(data)}


def cmd_pretrain(cfg: RunConfig, out: Path) -> dict:
    data = _load(cfg, str(_require(cfg.data, "data")))
    model = build_model(cfg)
    records = run_method(model, data, cfg, out_dir=out)
    model.save(out / "checkpoint.bybt")
    return {"steps": len(records), "checkpoint": str(out / "checkpoint.bybt")}


def cmd_finetune(cfg: RunConfig, out: Path) -> dict:
    ckpt = _require(cfg.checkpoint, "checkpoint")
    data = _load(cfg, str(_require(cfg.finetune_data, "finetune_data")))
    if not cfg.task:
        raise UsageError("--task is required")
    model = load_model(cfg, ckpt)
    clf = finetune(model, data, cfg.task, cfg, out_dir=out)
    save_classifier(clf, out / "finetuned.bybt")
    result = {"checkpoint": str(out / "finetuned.bybt")}
    if cfg.test_data:
        report = evaluate(clf, _load(cfg, str(_require(cfg.test_data, "test_data"))), cfg)
        report.write(out)
        result["metrics"] = report.metrics
    return result


def cmd_eval(cfg: RunConfig, out: Path) -> dict:
    ckpt = _require(cfg.checkpoint, "checkpoint")
    data = _load(cfg, str(_require(cfg.test_data, "test_data")))
    if not cfg.task:
        raise UsageError("--task is required")
    report = evaluate(load_classifier(cfg, ckpt, cfg.task), data, cfg)
    report.write(out)
    return {"metrics": report.metrics}


def cmd_bench(cfg: RunConfig, out: Path) -> dict:
    data = _load(cfg, str(_require(cfg.data, "data")))
    report = bench(data, cfg)
    report.write(out / "bench.json")
    return dataclasses.asdict(report)


def _model_for_export(cfg: RunConfig):
    return load_model(cfg, _require(cfg.checkpoint, "checkpoint")) if cfg.checkpoint else build_model(cfg)


def cmd_attn(cfg: RunConfig, out: Path) -> dict:
    data = _load(cfg, str(_require(cfg.data, "data")))
    maps = export_attention(_model_for_export(cfg), data, cfg.num_samples, cfg, out)
    return {"layers": len(maps)}


def cmd_export_emb(cfg: RunConfig, out: Path) -> dict:
    data = _load(cfg, str(_require(cfg.data, "data")))
    E = export_embeddings(_model_for_export(cfg), data, cfg.num_samples, cfg, out / "embeddings.csv")
    return {"rows": int(E.shape[0])}


def cmd_count_params(cfg: RunConfig, out: Path) -> dict:
    return count_params(cfg.seq_config)


HANDLERS = {
    "pretrain": cmd_pretrain,
    "finetune": cmd_finetune,
    "eval": cmd_eval,
    "bench": cmd_bench,
    "attn": cmd_attn,
    "export-emb": cmd_export_emb,
    "count-params": cmd_count_params,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:  # argparse reports usage errors with status 2
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if ns.command == "generate":
            cfg, out_dir = resolve_config(ns, GeneratorConfig)
            result = cmd_generate(ns, cfg, out_dir)
        else:
            cfg, _ = resolve_config(ns, RunConfig)
            out = Path(cfg.out_dir)
            out.mkdir(parents=True, exist_ok=True)
            result = HANDLERS[ns.command](cfg, out)
            write_manifest(out / "manifest.json", ns.command, cfg, {"result": result})
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"byb {ns.command}: error: {exc}", file=sys.stderr)
        return 2
    except (ConfigError, DataFormatError, ValidationError, UndefinedMetricError, OSError, ValueError, KeyError) as exc:
        print(f"byb {ns.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    print(json.dumps(result, indent=2, sort_keys=True, default=float))
    return 0


if __name__ == "__main__":
    sys.exit(main())
