"""``bmi`` command line: run pipeline stages against a work directory, or a whole experiment."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .dataset import dataset_summary
from .evaluation.config import ExperimentConfig, derive_seed, parse_value
from .evaluation.metrics import EvaluationReport
from .evaluation.runner import (
    Workspace,
    enroll_stage,
    extract_stage,
    fit_stage,
    ingest_stage,
    predict_stage,
    report_stage,
    run_experiment,
    stage,
)
from .evaluation.tables import emit_tables
from .exceptions import FaceBMIError
from .facepipe.pipeline import DEFAULT_MARGIN
from .inference import FeatureConfig

log = logging.getLogger("facebmi")


def _pairs(items: list[str]) -> dict:
    out = {}
    for item in items or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise FaceBMIError(f"expected key=value, got {item!r}")
        out[key.strip()] = parse_value(value)
    return out


def _protocol(value: str | None, seed: int):
    """``None``/"manifest" -> manifest split column; a name or a JSON mapping otherwise."""
    if value in (None, "manifest"):
        return None
    cfg = ExperimentConfig.from_mapping({"seed": seed, "dataset": {"manifest": "-", "protocol": (
        json.loads(value) if value.strip().startswith("{") else value)}})
    return cfg.protocol()


def cmd_ingest(args) -> int:
    ws = Workspace(args.workdir)
    with stage(ws, "ingest"):
        report = ingest_stage(ws, args.manifest)
    summary = dataset_summary(report.samples).to_dict()
    print(json.dumps({"accepted": len(report.samples), "rejected": len(report.rejected), "summary": summary}))
    for r in report.rejected:
        log.warning("rejected line %s (%s): %s", r.line, r.sample_id, r.reason)
    return 0


def cmd_enroll(args) -> int:
    ws = Workspace(args.workdir)
    with stage(ws, "enroll"):
        result = enroll_stage(ws, args.detector, args.margin, args.jobs, args.detector_sha256)
    print(json.dumps({"enrolled": len(result.crops), "fte": result.fte_count, "io_errors": len(result.io_errors)}))
    return 0


def cmd_extract(args) -> int:
    ws = Workspace(args.workdir)
    feats = FeatureConfig(args.backbone, (args.stub_size, args.stub_size), args.l2_normalize, args.random_init,
                          derive_seed(args.seed, "extract"))
    with stage(ws, "extract"):
        found = extract_stage(ws, feats, args.weights_dir, args.cache_dir)
    meta = ws.read_json("features.json")
    print(json.dumps({"backbone": args.backbone, "tag": meta["tag"], "n": len(found), "computed": meta["computed"]}))
    return 0


def cmd_train(args) -> int:
    ws = Workspace(args.workdir)
    with stage(ws, "fit"):
        protocol = _protocol(args.protocol, args.seed)
        fit_stage(ws, args.regressor, _pairs(args.param), protocol, args.seed)
    split = ws.read_json("split.json")
    print(json.dumps({"model": str(ws.model_path), "n_train": len(split["train"]), "n_test": len(split["test"])}))
    return 0


def cmd_eval(args) -> int:
    ws = Workspace(args.workdir)
    with stage(ws, "predict"):
        preds = predict_stage(ws, args.weights_dir)
    with stage(ws, "report"):
        report = report_stage(ws, preds)
    print(emit_tables([report]).text, end="")
    return 0


def _load_reports(paths: list[str]) -> list[EvaluationReport]:
    reports = []
    for p in map(Path, paths):
        reports.append(EvaluationReport.read(p / "report.json" if p.is_dir() else p))
    return reports


def cmd_report(args) -> int:
    paths = args.reports or [args.workdir]
    table = emit_tables(_load_reports(paths))
    print(table.text, end="")
    if args.csv:
        Path(args.csv).write_text(table.csv)
    if args.text:
        Path(args.text).write_text(table.text)
    return 0


def cmd_run(args) -> int:
    cfg = ExperimentConfig.from_file(args.config)
    for key, value in _pairs(args.set).items():
        cfg.set(key, value)
    if args.output_dir:
        cfg.set("output_dir", str(Path(args.output_dir).resolve()))
    result = run_experiment(cfg)
    print(emit_tables([result.report]).text, end="")
    extra = result.report.extra
    print(f"n_test={result.report.n_overall} fte={result.report.fte_count} "
          f"baseline_mae={extra['baseline_mae']:.4f} -> {result.workspace.root}")
    return 0


def cmd_synth(args) -> int:
    """Render a demo dataset with a learnable BMI signal and a ready-to-run config."""
    from .synth import make_synthetic_dataset

    out = Path(args.outdir)
    manifest, samples, _ = make_synthetic_dataset(out, args.n, seed=args.seed, n_blank=args.blanks)
    n_test = max(2, (args.n // 4) // 2 * 2)
    config = {
        "dataset": {"manifest": manifest.name,
                    "protocol": {"train_count": args.n - n_test - args.n // 20, "test_count": n_test,
                                 "gender_balanced_test": True}},
        "facepipe": {"detector_model": "synthetic", "margin": DEFAULT_MARGIN},
        "features": {"backbone": "stub", "stub_size": [32, 32], "cache_dir": "cache"},
        "regressor": {"kind": "ridge", "lam": "auto"},
        "seed": args.seed,
        "output_dir": "run",
    }
    import yaml

    (out / "config.yaml").write_text(yaml.safe_dump(config, sort_keys=False))
    print(json.dumps({"manifest": str(manifest), "config": str(out / "config.yaml"), "n": len(samples)}))
    return 0


def cmd_serve(args) -> int:
    from .service import serve

    return serve(args)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bmi", description="BMI estimation from face images")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        p = sub.add_parser(name, help=help_)
        p.set_defaults(func=func)
        if name not in ("run", "synth", "serve"):
            p.add_argument("--workdir", default="bmi-work", help="stage artifact directory")
        return p

    p = add("ingest", cmd_ingest, "validate a manifest CSV")
    p.add_argument("manifest")

    p = add("enroll", cmd_enroll, "detect and crop faces")
    p.add_argument("--detector", default="synthetic", help="detector model file, 'synthetic' or 'dlib'")
    p.add_argument("--detector-sha256", default=None)
    p.add_argument("--margin", type=float, default=DEFAULT_MARGIN)
    p.add_argument("--jobs", type=int, default=1)

    p = add("extract", cmd_extract, "compute (cached) deep features")
    p.add_argument("--backbone", required=True)
    p.add_argument("--weights-dir", default=None)
    p.add_argument("--cache-dir", default=None)
    p.add_argument("--random-init", action="store_true", help="seeded random weights (plumbing tests only)")
    p.add_argument("--stub-size", type=int, default=32)
    p.add_argument("--l2-normalize", action="store_true")
    p.add_argument("--seed", type=int, default=0)

    p = add("train", cmd_train, "split and fit a regressor")
    p.add_argument("--regressor", choices=("ridge", "svr", "cnn"), required=True)
    p.add_argument("--protocol", default=None, help="visualbmi, vip_attribute, manifest, or a JSON mapping")
    p.add_argument("--param", action="append", help="regressor hyperparameter key=value")
    p.add_argument("--seed", type=int, default=0)

    p = add("eval", cmd_eval, "predict the test split and write the report")
    p.add_argument("--weights-dir", default=None)

    p = add("report", cmd_report, "tabulate one or more reports")
    p.add_argument("reports", nargs="*", help="report.json files or work directories")
    p.add_argument("--csv", default=None)
    p.add_argument("--text", default=None)

    p = add("run", cmd_run, "run a whole experiment from a config file")
    p.add_argument("config")
    p.add_argument("--set", action="append", help="override a dotted config key, key=value")
    p.add_argument("--output-dir", default=None)

    p = add("synth", cmd_synth, "write a synthetic demo dataset and config")
    p.add_argument("outdir")
    p.add_argument("--n", type=int, default=200)
    p.add_argument("--blanks", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)

    from .service import build_parser as service_parser

    service_parser(add("serve", cmd_serve, "start the HTTP inference service"))
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except FaceBMIError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
