"""Manifest ingestion, split protocols and BMI categories."""
from __future__ import annotations

import bisect
import csv
import json
import math
from collections import Counter
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .exceptions import DomainError, ManifestError, ProtocolError

MANIFEST_COLUMNS = ("sample_id", "image_ref", "gender", "bmi", "dataset_tag")
BMI_MIN, BMI_MAX = 10.0, 100.0


class Gender(str, Enum):
    MALE = "male"
    FEMALE = "female"
    UNKNOWN = "unknown"


class DatasetTag(str, Enum):
    VISUALBMI = "visualbmi"
    VIP_ATTRIBUTE = "vip_attribute"
    BOLLYWOOD = "bollywood"
    SYNTHETIC = "synthetic"


class Split(str, Enum):
    TRAIN = "train"
    TEST = "test"
    UNASSIGNED = "unassigned"


class BmiCategory(str, Enum):
    UNDERWEIGHT = "underweight"
    NORMAL = "normal"
    OVERWEIGHT = "overweight"
    MODERATELY_OBESE = "moderately_obese"
    SEVERELY_OBESE = "severely_obese"
    VERY_SEVERELY_OBESE = "very_severely_obese"

    @property
    def ordinal(self) -> int:
        return _CATEGORY_ORDER.index(self)


_CATEGORY_ORDER = list(BmiCategory)
# Lower edges of every category but the first, bins are [lo, hi).
BMI_BOUNDARIES = (18.5, 25.0, 30.0, 35.0, 40.0)


@dataclass(frozen=True)
class FaceSample:
    sample_id: str
    image_ref: str
    gender: Gender
    bmi: float
    dataset_tag: DatasetTag
    split: Split = Split.UNASSIGNED

    def __post_init__(self):
        if not self.sample_id:
            raise ValueError("sample_id must be non-empty")
        if not (math.isfinite(self.bmi) and BMI_MIN <= self.bmi <= BMI_MAX):
            raise ValueError(f"bmi {self.bmi!r} outside [{BMI_MIN}, {BMI_MAX}]")
        object.__setattr__(self, "gender", Gender(self.gender))
        object.__setattr__(self, "dataset_tag", DatasetTag(self.dataset_tag))
        object.__setattr__(self, "split", Split(self.split))

    def to_dict(self) -> dict:
        d = asdict(self)
        for key in ("gender", "dataset_tag", "split"):
            d[key] = d[key].value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "FaceSample":
        return cls(
            sample_id=d["sample_id"],
            image_ref=d["image_ref"],
            gender=Gender(d["gender"]),
            bmi=float(d["bmi"]),
            dataset_tag=DatasetTag(d["dataset_tag"]),
            split=Split(d.get("split", "unassigned")),
        )


@dataclass(frozen=True)
class RejectedRow:
    line: int
    sample_id: str | None
    reason: str


@dataclass
class IngestReport:
    """Samples accepted from a manifest plus the rows that were rejected."""

    source: str
    samples: list[FaceSample] = field(default_factory=list)
    rejected: list[RejectedRow] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(
            {
                "source": self.source,
                "accepted": len(self.samples),
                "rejected": [asdict(r) for r in self.rejected],
            },
            indent=2,
        )


@dataclass(frozen=True)
class SplitProtocol:
    name: str
    train_count: int
    test_count: int
    gender_balanced_test: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.train_count < 0 or self.test_count < 0:
            raise ValueError("split counts must be non-negative")
        if self.gender_balanced_test and self.test_count % 2:
            raise ValueError("a gender-balanced test set needs an even test_count")

    @classmethod
    def evaluation_only(cls, n: int, name: str = "evaluation_only", seed: int = 0):
        return cls(name=name, train_count=0, test_count=n, gender_balanced_test=False, seed=seed)


# Published protocols; counts are after FTE exclusion.
VISUALBMI_PROTOCOL = SplitProtocol("visualbmi", 2896, 1302, True)
VIP_ATTRIBUTE_PROTOCOL = SplitProtocol("vip_attribute", 726, 300, True)


def _resolve_ref(ref: str, base: Path) -> str:
    if "://" in ref or Path(ref).is_absolute():
        return ref
    return str((base / ref).resolve())


def read_manifest(path: str | Path) -> IngestReport:
    """Parse a manifest CSV, collecting invalid rows instead of raising.

    Relative ``image_ref`` values are resolved against the manifest's directory.
    """
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"manifest not found: {path}")
    report = IngestReport(source=str(path))
    seen: set[str] = set()
    try:
        with path.open(newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None:
                raise ManifestError(f"manifest is empty: {path}")
            missing = [c for c in MANIFEST_COLUMNS if c not in reader.fieldnames]
            if missing:
                raise ManifestError(f"manifest {path} lacks columns {missing}")
            for lineno, row in enumerate(reader, start=2):
                sid = (row.get("sample_id") or "").strip() or None
                try:
                    sample = _parse_row(row, path.parent)
                except (ValueError, TypeError) as exc:
                    report.rejected.append(RejectedRow(lineno, sid, str(exc)))
                    continue
                if sample.sample_id in seen:
                    report.rejected.append(RejectedRow(lineno, sid, "duplicate sample_id"))
                    continue
                seen.add(sample.sample_id)
                report.samples.append(sample)
    except (UnicodeDecodeError, csv.Error) as exc:
        raise ManifestError(f"cannot parse manifest {path}: {exc}") from exc
    return report


def _parse_row(row: dict, base: Path) -> FaceSample:
    try:
        bmi = float(row["bmi"])
    except (TypeError, ValueError):
        raise ValueError(f"unparsable bmi {row.get('bmi')!r}") from None
    if not bmi > 0:
        raise ValueError(f"non-positive bmi {bmi}")
    ref = (row.get("image_ref") or "").strip()
    if not ref:
        raise ValueError("empty image_ref")
    split = (row.get("split") or "unassigned").strip()
    return FaceSample(
        sample_id=row["sample_id"].strip(),
        image_ref=_resolve_ref(ref, base),
        gender=Gender(row["gender"].strip().lower()),
        bmi=bmi,
        dataset_tag=DatasetTag(row["dataset_tag"].strip().lower()),
        split=Split(split),
    )


def load_manifest(path: str | Path) -> list[FaceSample]:
    return read_manifest(path).samples


def write_manifest(samples: Iterable[FaceSample], path: str | Path) -> None:
    samples = list(samples)
    with_split = any(s.split != Split.UNASSIGNED for s in samples)
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(MANIFEST_COLUMNS + (("split",) if with_split else ()))
        for s in samples:
            row = [s.sample_id, s.image_ref, s.gender.value, repr(float(s.bmi)), s.dataset_tag.value]
            writer.writerow(row + ([s.split.value] if with_split else []))


def apply_split(
    samples: Sequence[FaceSample], protocol: SplitProtocol
) -> tuple[list[FaceSample], list[FaceSample]]:
    """Partition samples into train and test sets according to ``protocol``.

    With ``gender_balanced_test`` the test set is a seeded stratified draw of
    ``test_count / 2`` men and women; the training set is drawn from what is
    left. Both outputs keep the input order and carry updated split tags.
    """
    n = len(samples)
    if protocol.train_count + protocol.test_count > n:
        raise ProtocolError(
            f"protocol {protocol.name!r} needs {protocol.train_count + protocol.test_count} "
            f"samples, only {n} available"
        )
    rng = np.random.default_rng(protocol.seed)
    if protocol.gender_balanced_test:
        half = protocol.test_count // 2
        test_idx: list[int] = []
        for g in (Gender.MALE, Gender.FEMALE):
            pool = [i for i, s in enumerate(samples) if s.gender == g]
            if len(pool) < half:
                raise ProtocolError(
                    f"protocol {protocol.name!r} needs {half} {g.value} test samples, "
                    f"only {len(pool)} available (short by {half - len(pool)})"
                )
            test_idx.extend(rng.permutation(pool)[:half].tolist())
        chosen = set(test_idx)
        rest = np.array([i for i in range(n) if i not in chosen], dtype=int)
        train_idx = rng.permutation(rest)[: protocol.train_count].tolist()
    else:
        perm = rng.permutation(n)
        test_idx = perm[: protocol.test_count].tolist()
        train_idx = perm[protocol.test_count : protocol.test_count + protocol.train_count].tolist()

    train_set, test_set = set(train_idx), set(test_idx)
    train = [replace(s, split=Split.TRAIN) for i, s in enumerate(samples) if i in train_set]
    test = [replace(s, split=Split.TEST) for i, s in enumerate(samples) if i in test_set]
    return train, test


def categorize_bmi(bmi: float) -> BmiCategory:
    try:
        value = float(bmi)
    except (TypeError, ValueError):
        raise DomainError(f"BMI must be a number, got {bmi!r}") from None
    if not value > 0:
        raise DomainError(f"BMI must be positive, got {bmi!r}")
    return _CATEGORY_ORDER[bisect.bisect_right(BMI_BOUNDARIES, value)]


@dataclass(frozen=True)
class DatasetSummary:
    total: int
    by_category: dict[BmiCategory, int]
    by_gender: dict[Gender, int]

    def to_dict(self) -> dict:
        return {
            "total": self.total,
            "by_category": {k.value: v for k, v in self.by_category.items()},
            "by_gender": {k.value: v for k, v in self.by_gender.items()},
        }


def dataset_summary(samples: Iterable[FaceSample]) -> DatasetSummary:
    cats: Counter = Counter()
    genders: Counter = Counter()
    total = 0
    for s in samples:
        cats[categorize_bmi(s.bmi)] += 1
        genders[s.gender] += 1
        total += 1
    return DatasetSummary(
        total=total,
        by_category={c: cats.get(c, 0) for c in BmiCategory},
        by_gender={g: genders.get(g, 0) for g in Gender},
    )
