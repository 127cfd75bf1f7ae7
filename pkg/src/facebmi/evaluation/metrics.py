"""Prediction sets, MAE / Pearson metrics and per-gender reports."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from ..dataset import DatasetTag, Gender

PREDICTION_COLUMNS = ("sample_id", "gender", "truth_bmi", "predicted_bmi")


class UndefinedCorrelationError(ValueError):
    pass


@dataclass(frozen=True)
class PredictionRow:
    sample_id: str
    gender: Gender
    truth_bmi: float
    predicted_bmi: float


@dataclass(frozen=True, eq=False)
class PredictionSet:
    rows: tuple[PredictionRow, ...]
    dataset_tag: str = ""
    model: str = ""
    regressor: str = ""

    def __post_init__(self):
        object.__setattr__(self, "rows", tuple(self.rows))
        ids = set()
        for r in self.rows:
            if not r.truth_bmi > 0:
                raise ValueError(f"truth BMI must be positive ({r.sample_id}: {r.truth_bmi})")
            if not math.isfinite(r.predicted_bmi):
                raise ValueError(f"prediction for {r.sample_id} is not finite")
            if r.sample_id in ids:
                raise ValueError(f"duplicate sample_id {r.sample_id!r} in prediction set")
            ids.add(r.sample_id)

    @classmethod
    def from_arrays(cls, truth, predicted, genders=None, sample_ids=None, **kw) -> "PredictionSet":
        truth = np.asarray(truth, dtype=np.float64).ravel()
        predicted = np.asarray(predicted, dtype=np.float64).ravel()
        if truth.shape != predicted.shape:
            raise ValueError(f"{truth.size} truths but {predicted.size} predictions")
        n = truth.size
        genders = [Gender.UNKNOWN] * n if genders is None else [Gender(g) for g in genders]
        sample_ids = [f"s{i:06d}" for i in range(n)] if sample_ids is None else list(sample_ids)
        rows = [PredictionRow(str(s), g, float(t), float(p)) for s, g, t, p in zip(sample_ids, genders, truth, predicted)]
        return cls(tuple(rows), **kw)

    def __len__(self) -> int:
        return len(self.rows)

    @property
    def truth(self) -> np.ndarray:
        return np.array([r.truth_bmi for r in self.rows], dtype=np.float64)

    @property
    def predicted(self) -> np.ndarray:
        return np.array([r.predicted_bmi for r in self.rows], dtype=np.float64)

    def subset(self, gender: Gender) -> "PredictionSet":
        return PredictionSet(tuple(r for r in self.rows if r.gender == gender), self.dataset_tag, self.model, self.regressor)

    def sorted(self) -> "PredictionSet":
        return PredictionSet(tuple(sorted(self.rows, key=lambda r: r.sample_id)), self.dataset_tag,
                             self.model, self.regressor)

    def write_csv(self, path: str | Path) -> None:
        """Rows sorted by sample_id; floats written with full round-trip precision."""
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(PREDICTION_COLUMNS)
            for r in self.sorted().rows:
                w.writerow([r.sample_id, r.gender.value, repr(r.truth_bmi), repr(r.predicted_bmi)])

    @classmethod
    def read_csv(cls, path: str | Path, **kw) -> "PredictionSet":
        with Path(path).open(newline="") as fh:
            rows = [
                PredictionRow(d["sample_id"], Gender(d["gender"]), float(d["truth_bmi"]), float(d["predicted_bmi"]))
                for d in csv.DictReader(fh)
            ]
        return cls(tuple(rows), **kw)


def _pairs(preds, truth=None) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(preds, PredictionSet):
        return preds.predicted, preds.truth
    p = np.asarray(preds, dtype=np.float64).ravel()
    t = np.asarray(truth, dtype=np.float64).ravel()
    if p.shape != t.shape:
        raise ValueError(f"{p.size} predictions but {t.size} truths")
    return p, t


def mae(preds: PredictionSet | Sequence[float], truth: Sequence[float] | None = None) -> float:
    """Mean absolute error; accepts a PredictionSet or two parallel arrays."""
    p, t = _pairs(preds, truth)
    if p.size == 0:
        raise ValueError("MAE of an empty prediction set is undefined")
    return float(np.mean(np.abs(p - t)))


def pearson(preds: PredictionSet | Sequence[float], truth: Sequence[float] | None = None) -> float:
    p, t = _pairs(preds, truth)
    if p.size < 2:
        raise UndefinedCorrelationError("Pearson correlation needs at least two pairs")
    dp, dt = p - p.mean(), t - t.mean()
    sp, st = math.sqrt(float(dp @ dp)), math.sqrt(float(dt @ dt))
    if sp == 0 or st == 0:
        raise UndefinedCorrelationError("Pearson correlation is undefined for a constant series")
    return float(np.clip((dp @ dt) / (sp * st), -1.0, 1.0))


@dataclass
class EvaluationReport:
    mae_overall: float
    n_overall: int
    mae_male: float | None = None
    n_male: int = 0
    mae_female: float | None = None
    n_female: int = 0
    fte_count: int = 0
    pearson_overall: float | None = None
    model: str = ""
    regressor: str = ""
    dataset_tag: str = ""
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.n_male + self.n_female > self.n_overall:
            raise ValueError("gender subsets cannot outnumber the overall set")
        for name in ("mae_overall", "mae_male", "mae_female"):
            v = getattr(self, name)
            if v is not None and v < 0:
                raise ValueError(f"{name} must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "EvaluationReport":
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def read(cls, path: str | Path) -> "EvaluationReport":
        return cls.from_dict(json.loads(Path(path).read_text()))


def grouped_report(preds: PredictionSet, fte_count: int = 0, per_gender: bool | None = None) -> EvaluationReport:
    """Overall and per-gender MAE.

    Gender fields stay ``None`` for an empty subset. ``per_gender=None``
    disables the split for Bollywood data, whose gender labels were not used
    for reporting.
    """
    if per_gender is None:
        per_gender = preds.dataset_tag != DatasetTag.BOLLYWOOD.value
    try:
        r = pearson(preds)
    except UndefinedCorrelationError:
        r = None
    report = EvaluationReport(mae(preds), len(preds), fte_count=int(fte_count), pearson_overall=r,
                              model=preds.model, regressor=preds.regressor, dataset_tag=preds.dataset_tag)
    if per_gender:
        male, female = preds.subset(Gender.MALE), preds.subset(Gender.FEMALE)
        report.n_male, report.n_female = len(male), len(female)
        report.mae_male = mae(male) if len(male) else None
        report.mae_female = mae(female) if len(female) else None
    return report


def constant_baseline_mae(train_bmi: Iterable[float], preds: PredictionSet) -> float:
    """MAE of predicting the training-set mean BMI for every test row."""
    mean = float(np.mean(np.asarray(list(train_bmi), dtype=np.float64)))
    return mae(np.full(len(preds), mean), preds.truth)
