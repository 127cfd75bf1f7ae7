"""Face cropping, preprocessing and enrollment with failure-to-enroll accounting."""
from __future__ import annotations

import io
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image, UnidentifiedImageError

from ..dataset import FaceSample
from ..exceptions import DegenerateCropError, ImageReadError, ShapeError
from .detector import FaceDetector

DEFAULT_MARGIN = 0.10


@dataclass(frozen=True)
class NormSpec:
    """Per-channel normalization applied after scaling pixels to [0, 1]."""

    name: str = "unit"
    mean: tuple[float, float, float] = (0.0, 0.0, 0.0)
    std: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def to_dict(self) -> dict:
        return {"name": self.name, "mean": list(self.mean), "std": list(self.std)}


UNIT_NORM = NormSpec()
IMAGENET_NORM = NormSpec("imagenet", (0.485, 0.456, 0.406), (0.229, 0.224, 0.225))


@dataclass(frozen=True, eq=False)
class FaceCrop:
    source_sample_id: str
    pixels: np.ndarray  # crop region, H x W x 3 uint8
    bbox: tuple[int, int, int, int]  # crop region in source coordinates, margin included
    detector_score: float
    face_bbox: tuple[int, int, int, int] | None = None  # raw detector box

    def __post_init__(self):
        if self.bbox[2] <= 0 or self.bbox[3] <= 0:
            raise DegenerateCropError(f"crop {self.source_sample_id!r} has zero area: {self.bbox}")


@dataclass
class EnrollmentResult:
    crops: list[FaceCrop] = field(default_factory=list)
    fte_ids: list[str] = field(default_factory=list)
    io_errors: list[str] = field(default_factory=list)

    @property
    def fte_count(self) -> int:
        return len(self.fte_ids)

    def report(self) -> dict:
        return {"fte": list(self.fte_ids), "io_errors": list(self.io_errors)}

    def write_report(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.report(), indent=2))


def read_image(ref: str | Path | bytes) -> np.ndarray:
    """Decode an image file (or raw bytes) to an RGB uint8 array."""
    try:
        src = io.BytesIO(ref) if isinstance(ref, (bytes, bytearray)) else ref
        with Image.open(src) as img:
            arr = np.asarray(img.convert("RGB"))
    except (OSError, UnidentifiedImageError, ValueError) as exc:
        raise ImageReadError(f"cannot read image {ref if not isinstance(ref, bytes) else '<bytes>'}: {exc}") from exc
    if arr.size == 0:
        raise ImageReadError("image is empty")
    return arr


def expand_bbox(
    bbox: tuple[int, int, int, int], margin: float, shape: tuple[int, ...]
) -> tuple[int, int, int, int]:
    """Grow ``bbox`` by ``margin`` of its size on every side, clipped to the image."""
    x, y, w, h = bbox
    H, W = shape[:2]
    mx, my = int(round(w * margin)), int(round(h * margin))
    x0, y0 = max(0, x - mx), max(0, y - my)
    x1, y1 = min(W, x + w + mx), min(H, y + h + my)
    return x0, y0, max(0, x1 - x0), max(0, y1 - y0)


def crop_from_bbox(
    image: np.ndarray,
    bbox: tuple[int, int, int, int],
    sample_id: str = "",
    score: float = float("nan"),
    margin: float = DEFAULT_MARGIN,
) -> FaceCrop:
    region = expand_bbox(bbox, margin, image.shape)
    x, y, w, h = region
    return FaceCrop(sample_id, np.ascontiguousarray(image[y : y + h, x : x + w]), region, score, tuple(bbox))


def detect_face(
    image: np.ndarray,
    detector: FaceDetector,
    sample_id: str = "",
    margin: float = DEFAULT_MARGIN,
) -> FaceCrop | None:
    """Return the highest-scoring face crop, or ``None`` when no face is found."""
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] < 3 or image.shape[0] == 0 or image.shape[1] == 0:
        raise ImageReadError(f"expected a non-empty H x W x 3 raster, got shape {image.shape}")
    detections = detector.detect(image)
    if not detections:
        return None
    best = detections[0]
    H, W = image.shape[:2]
    x, y, w, h = best.bbox
    x0, y0 = max(0, x), max(0, y)
    box = (x0, y0, min(W, x + w) - x0, min(H, y + h) - y0)
    if box[2] <= 0 or box[3] <= 0:
        return None
    return crop_from_bbox(image, box, sample_id, best.score, margin)


def preprocess(
    crop: FaceCrop | np.ndarray,
    target_size: tuple[int, int],
    normalization: NormSpec = UNIT_NORM,
) -> np.ndarray:
    """Resize a crop to ``target_size`` (H, W) and normalize; returns float32 H x W x 3."""
    pixels = crop.pixels if isinstance(crop, FaceCrop) else np.asarray(crop)
    if pixels.ndim != 3 or pixels.shape[2] != 3:
        raise ShapeError(f"crop must be H x W x 3, got {pixels.shape}")
    if pixels.shape[0] == 0 or pixels.shape[1] == 0:
        raise DegenerateCropError("cannot preprocess a zero-area crop")
    H, W = target_size
    if pixels.shape[:2] != (H, W):
        pixels = np.asarray(Image.fromarray(pixels.astype(np.uint8)).resize((W, H), Image.BILINEAR))
    out = pixels.astype(np.float32) / np.float32(255.0)
    mean = np.asarray(normalization.mean, dtype=np.float32)
    std = np.asarray(normalization.std, dtype=np.float32)
    if np.any(mean != 0) or np.any(std != 1):
        out = (out - mean) / std
    return out


def _enroll_one(sample: FaceSample, detector: FaceDetector, margin: float):
    try:
        image = read_image(sample.image_ref)
    except ImageReadError:
        return "io", None
    crop = detect_face(image, detector, sample.sample_id, margin)
    return ("ok", crop) if crop is not None else ("fte", None)


def enroll(
    samples: Sequence[FaceSample],
    detector: FaceDetector,
    margin: float = DEFAULT_MARGIN,
    n_jobs: int = 1,
) -> EnrollmentResult:
    """Detect faces for every sample; failures are counted, never raised.

    Samples whose image cannot be read go to ``io_errors``; samples with no
    detected face go to ``fte_ids``. Output order follows input order.
    """
    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            outcomes = list(pool.map(lambda s: _enroll_one(s, detector, margin), samples))
    else:
        outcomes = [_enroll_one(s, detector, margin) for s in samples]
    result = EnrollmentResult()
    for sample, (status, crop) in zip(samples, outcomes):
        if status == "ok":
            result.crops.append(crop)
        elif status == "fte":
            result.fte_ids.append(sample.sample_id)
        else:
            result.io_errors.append(sample.sample_id)
    return result
