"""Pipeline stages over a workspace directory, and the end-to-end experiment runner.

Each stage reads the artifacts of earlier stages from the workspace and
writes its own, so the CLI can run them one at a time::

    ingest_report.json, samples.json   ingest
    fte_report.json, crops/            enroll
    features.json (+ feature cache)    extract
    split.json, model.bmimodel         fit (loss.csv for the CNN)
    predictions.csv                    predict
    report.json/.txt/.csv              report
    status.json                        progress; "failed" marks partial artifacts
"""
from __future__ import annotations

import contextlib
import json
import logging
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from ..customcnn import CustomCNNRegressor, TrainResult, save_custom_cnn
from ..dataset import FaceSample, Split, apply_split, read_manifest
from ..exceptions import FaceBMIError, StageError
from ..facepipe.detector import load_detector
from ..facepipe.pipeline import DEFAULT_MARGIN, UNIT_NORM, EnrollmentResult, FaceCrop, enroll, preprocess
from ..features.cache import FeatureCache
from ..features.extractor import FeatureVector
from ..inference import FeatureComputer, FeatureConfig, Predictor
from ..regression.estimators import EpsilonSVR, RidgeRegressor
from .config import CUSTOM_CNN, ExperimentConfig, derive_seed
from .metrics import EvaluationReport, PredictionRow, PredictionSet, constant_baseline_mae, grouped_report
from .tables import emit_tables

log = logging.getLogger(__name__)

STAGES = ("ingest", "enroll", "extract", "fit", "predict", "report")
EXTRACT_BATCH = 64


class Workspace:
    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def path(self, name: str) -> Path:
        return self.root / name

    @property
    def crops_dir(self) -> Path:
        return self.root / "crops"

    @property
    def model_path(self) -> Path:
        return self.root / "model.bmimodel"

    def write_json(self, name: str, obj) -> Path:
        p = self.path(name)
        tmp = p.with_suffix(p.suffix + ".tmp")
        tmp.write_text(json.dumps(obj, indent=2, sort_keys=True))
        tmp.replace(p)
        return p

    def read_json(self, name: str, stage_hint: str = ""):
        p = self.path(name)
        if not p.is_file():
            hint = f"; run the {stage_hint} stage first" if stage_hint else ""
            raise FaceBMIError(f"{p} not found{hint}")
        return json.loads(p.read_text())

    def status(self) -> dict:
        p = self.path("status.json")
        return json.loads(p.read_text()) if p.is_file() else {"status": "new", "completed": []}

    def _update(self, **kw) -> None:
        st = self.status()
        st.update(kw)
        self.write_json("status.json", st)

    def mark_started(self) -> None:
        self.write_json("status.json", {"status": "running", "completed": []})

    def mark_done(self, stage: str) -> None:
        st = self.status()
        done = [s for s in st.get("completed", []) if s != stage] + [stage]
        self._update(completed=done, status="running")

    def mark_failed(self, stage: str, exc: BaseException) -> None:
        self._update(status="failed", failed_stage=stage, error=f"{type(exc).__name__}: {exc}", partial=True)

    def mark_complete(self) -> None:
        self._update(status="complete", partial=False, failed_stage=None, error=None)


@contextlib.contextmanager
def stage(ws: Workspace, name: str):
    """Run a block as the named stage; failures become StageError and flag the workspace."""
    t0 = time.perf_counter()
    try:
        yield
    except StageError as exc:
        ws.mark_failed(exc.stage, exc.cause)
        raise
    except Exception as exc:
        ws.mark_failed(name, exc)
        raise StageError(name, exc) from exc
    ws.mark_done(name)
    log.info("stage %s done in %.2fs", name, time.perf_counter() - t0)


# ingest


def ingest_stage(ws: Workspace, manifest: str | Path):
    report = read_manifest(manifest)
    ws.path("ingest_report.json").write_text(report.to_json())
    ws.write_json("samples.json", [s.to_dict() for s in report.samples])
    return report


def load_samples(ws: Workspace) -> list[FaceSample]:
    return [FaceSample.from_dict(d) for d in ws.read_json("samples.json", "ingest")]


# enroll


def enroll_stage(ws: Workspace, detector_model: str = "synthetic", margin: float = DEFAULT_MARGIN,
                 n_jobs: int = 1, detector_sha256: str | None = None) -> EnrollmentResult:
    samples = load_samples(ws)
    detector = load_detector(detector_model, detector_sha256)
    result = enroll(samples, detector, margin=margin, n_jobs=n_jobs)
    ws.crops_dir.mkdir(exist_ok=True)
    index = {}
    for k, crop in enumerate(result.crops):
        name = f"c{k:06d}.png"
        Image.fromarray(crop.pixels).save(ws.crops_dir / name)
        index[crop.source_sample_id] = {
            "file": name,
            "bbox": list(crop.bbox),
            "face_bbox": list(crop.face_bbox) if crop.face_bbox else None,
            "score": crop.detector_score,
        }
    ws.write_json("crops.json", {"detector_model": str(detector_model), "margin": margin, "crops": index})
    result.write_report(ws.path("fte_report.json"))
    return result


def load_crops(ws: Workspace, ids: list[str] | None = None) -> dict[str, FaceCrop]:
    index = ws.read_json("crops.json", "enroll")["crops"]
    out = {}
    for sid in (ids if ids is not None else list(index)):
        entry = index[sid]
        pixels = np.asarray(Image.open(ws.crops_dir / entry["file"]).convert("RGB"))
        face = tuple(entry["face_bbox"]) if entry["face_bbox"] else None
        out[sid] = FaceCrop(sid, pixels, tuple(entry["bbox"]), entry["score"], face)
    return out


def fte_count(ws: Workspace) -> int:
    return len(ws.read_json("fte_report.json", "enroll")["fte"])


# extract


def extract_stage(ws: Workspace, features: FeatureConfig, weights_dir: str | Path | None = None,
                  cache_dir: str | Path | None = None) -> dict[str, np.ndarray]:
    """Features for every enrolled crop; cached vectors are reused, the rest computed."""
    computer = FeatureComputer(features, weights_dir)
    cache = FeatureCache(cache_dir or ws.path("cache"))
    tag = features.tag
    ids = list(ws.read_json("crops.json", "enroll")["crops"])
    found: dict[str, np.ndarray] = {}
    missing = []
    for sid in ids:
        vec = cache.get(sid, tag)
        if vec is not None and vec.dim == features.spec.feature_dim:
            found[sid] = vec.values
        else:
            missing.append(sid)
    for i in range(0, len(missing), EXTRACT_BATCH):
        chunk = missing[i : i + EXTRACT_BATCH]
        crops = load_crops(ws, chunk)
        feats = computer.compute([crops[s] for s in chunk])
        cache.put_many([(s, FeatureVector(tag, f)) for s, f in zip(chunk, feats)])
        found.update(zip(chunk, feats))
    ws.write_json("features.json", {
        "tag": tag,
        "config": features.to_dict(),
        "cache_dir": str(Path(cache.cache_dir).resolve()),
        "weights_dir": str(Path(weights_dir).resolve()) if weights_dir else None,
        "n": len(ids),
        "computed": len(missing),
    })
    return found


def _feature_matrix(ws: Workspace, ids: list[str]) -> tuple[np.ndarray, dict]:
    meta = ws.read_json("features.json", "extract")
    cache = FeatureCache(meta["cache_dir"])
    rows = []
    for sid in ids:
        vec = cache.get(sid, meta["tag"])
        if vec is None:
            raise FaceBMIError(f"no cached {meta['tag']} features for {sid!r}; rerun extract")
        rows.append(vec.values)
    dim = FeatureConfig.from_dict(meta["config"]).spec.feature_dim
    return (np.vstack(rows).astype(np.float64) if rows else np.zeros((0, dim))), meta


# fit


def split_samples(samples: list[FaceSample], protocol) -> tuple[list[FaceSample], list[FaceSample]]:
    if protocol is None:
        train = [s for s in samples if s.split == Split.TRAIN]
        test = [s for s in samples if s.split == Split.TEST]
        if not train or not test:
            raise FaceBMIError("manifest split column must mark both train and test samples")
        return train, test
    return apply_split(samples, protocol)


def build_estimator(kind: str, hyperparams: dict, seed: int, backbone_id: str = ""):
    hp = dict(hyperparams)
    if kind == "ridge":
        if "lambda_grid" in hp:
            hp["lambda_grid"] = tuple(hp["lambda_grid"])
        return RidgeRegressor(random_state=seed, backbone_id=backbone_id, **hp)
    if kind == "svr":
        return EpsilonSVR(backbone_id=backbone_id, **hp)
    if kind == "cnn":
        for key in ("input_size", "conv_channels"):
            if key in hp:
                hp[key] = tuple(hp[key])
        return CustomCNNRegressor(random_state=seed, **hp)
    raise FaceBMIError(f"unknown regressor {kind!r}")


def fit_stage(ws: Workspace, kind: str, hyperparams: dict | None = None, protocol=None, seed: int = 0):
    samples = load_samples(ws)
    crops_meta = ws.read_json("crops.json", "enroll")
    enrolled = [s for s in samples if s.sample_id in crops_meta["crops"]]
    train, test = split_samples(enrolled, protocol)
    train_ids = [s.sample_id for s in train]
    y = np.array([s.bmi for s in train], dtype=np.float64)
    pipeline = {"margin": crops_meta["margin"], "detector_model": crops_meta["detector_model"]}
    est_seed = derive_seed(seed, "fit")
    if kind == "cnn":
        est = build_estimator(kind, hyperparams or {}, est_seed)
        size = tuple(est.input_size)
        crops = load_crops(ws, train_ids)
        X = np.stack([preprocess(crops[s], size, UNIT_NORM) for s in train_ids])
        est.fit(X, y)
        result = TrainResult(est.model_, est.history_, est.best_epoch_)
        result.write_history(ws.path("loss.csv"))
        save_custom_cnn(est.model_, ws.model_path, est.history_, extra={"pipeline": pipeline})
        backbone = CUSTOM_CNN
    else:
        X, meta = _feature_matrix(ws, train_ids)
        backbone = meta["config"]["backbone"]
        est = build_estimator(kind, hyperparams or {}, est_seed, backbone)
        est.fit(X, y)
        pipeline["features"] = meta["config"]
        est.model_.save(ws.model_path, extra={"pipeline": pipeline})
    ws.write_json("split.json", {
        "protocol": getattr(protocol, "name", "manifest"),
        "regressor": kind,
        "backbone": backbone,
        "hyperparams": hyperparams or {},
        "train": train_ids,
        "test": [s.sample_id for s in test],
        "train_mean_bmi": float(y.mean()),
    })
    return est


# predict / report


def predict_stage(ws: Workspace, weights_dir: str | Path | None = None) -> PredictionSet:
    split = ws.read_json("split.json", "fit")
    by_id = {s.sample_id: s for s in load_samples(ws)}
    test_ids = split["test"]
    if split["regressor"] != "cnn" and weights_dir is None:
        weights_dir = ws.read_json("features.json", "extract").get("weights_dir")
    predictor = Predictor.from_file(ws.model_path, weights_dir)
    if predictor.kind == "custom_cnn":
        crops = load_crops(ws, test_ids)
        pred = predictor.predict_crops([crops[s] for s in test_ids])
    else:
        X, _ = _feature_matrix(ws, test_ids)
        pred = predictor.predict_features(X)
    tags = {by_id[s].dataset_tag.value for s in test_ids}
    rows = [PredictionRow(s, by_id[s].gender, by_id[s].bmi, float(p)) for s, p in zip(test_ids, pred)]
    preds = PredictionSet(tuple(rows), tags.pop() if len(tags) == 1 else "mixed", split["backbone"],
                          split["regressor"]).sorted()
    preds.write_csv(ws.path("predictions.csv"))
    return preds


def report_stage(ws: Workspace, preds: PredictionSet | None = None) -> EvaluationReport:
    split = ws.read_json("split.json", "fit")
    if preds is None:
        preds = PredictionSet.read_csv(ws.path("predictions.csv"), model=split["backbone"],
                                       regressor=split["regressor"])
    tags = {FaceSample.from_dict(d).dataset_tag.value for d in ws.read_json("samples.json")}
    if not preds.dataset_tag:
        preds = PredictionSet(preds.rows, tags.pop() if len(tags) == 1 else "mixed", preds.model, preds.regressor)
    report = grouped_report(preds, fte_count(ws))
    report.extra = {
        "baseline_mae": constant_baseline_mae([split["train_mean_bmi"]], preds),
        "n_train": len(split["train"]),
        "protocol": split["protocol"],
    }
    ws.path("report.json").write_text(report.to_json())
    table = emit_tables([report])
    ws.path("report.txt").write_text(table.text)
    ws.path("report.csv").write_text(table.csv)
    return report


@dataclass
class ExperimentResult:
    report: EvaluationReport
    predictions: PredictionSet
    workspace: Workspace


def feature_config(config: ExperimentConfig) -> FeatureConfig:
    return FeatureConfig(
        backbone=config.get("features.backbone"),
        stub_size=tuple(config.get("features.stub_size")),
        l2_normalize=bool(config.get("features.l2_normalize")),
        random_init=bool(config.get("features.random_init")),
        seed=derive_seed(config.seed, "extract"),
    )


def run_experiment(config: ExperimentConfig) -> ExperimentResult:
    """ingest -> enroll -> extract -> fit -> predict -> report, all under ``config.output_dir``."""
    config.validate()
    ws = Workspace(config.output_dir)
    ws.mark_started()
    config.write_resolved(ws.path("config.resolved.json"))
    kind = config.regressor_kind
    with stage(ws, "ingest"):
        ingest_stage(ws, config.manifest)
    with stage(ws, "enroll"):
        enroll_stage(ws, config.detector_model, float(config.get("facepipe.margin")),
                     int(config.get("facepipe.n_jobs")), config.get("facepipe.detector_sha256"))
    if kind != "cnn":
        with stage(ws, "extract"):
            extract_stage(ws, feature_config(config), config.weights_dir, config.cache_dir)
    with stage(ws, "fit"):
        fit_stage(ws, kind, config.hyperparams, config.protocol(), config.seed)
    with stage(ws, "predict"):
        preds = predict_stage(ws, config.weights_dir)
    with stage(ws, "report"):
        report = report_stage(ws, preds)
    ws.mark_complete()
    return ExperimentResult(report, preds, ws)
