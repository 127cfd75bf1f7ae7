"""Frontal face detectors: a HOG + linear classifier sliding-window detector.

The detector runs a coarse scan over an image pyramid using block-level HOG
features, then refines the best candidates at one-pixel resolution in source
coordinates. Refinement operates on crops of the original image, which keeps
the detected box equivariant to integer translations of the face.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from PIL import Image

from ..exceptions import ConfigError
from .hog import hog_blocks


@dataclass(frozen=True)
class Detection:
    bbox: tuple[int, int, int, int]  # x, y, w, h
    score: float


class FaceDetector(Protocol):
    def detect(self, image: np.ndarray) -> list[Detection]:
        """Return detections sorted by descending score."""
        ...


def _to_gray(image: np.ndarray) -> np.ndarray:
    if image.ndim == 2:
        return image.astype(np.float64) / 255.0
    rgb = image[..., :3].astype(np.float64) / 255.0
    return rgb @ np.array([0.2125, 0.7154, 0.0721])


def _resize_gray(gray: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    """Resize a [0, 1] float image to ``(h, w)``."""
    h, w = size
    if gray.shape == (h, w):
        return gray
    img = Image.fromarray(np.ascontiguousarray(gray, dtype=np.float32))
    return np.asarray(img.resize((w, h), Image.BILINEAR), dtype=np.float64)


def _n_features(window: int, cell: int, block: int, orientations: int) -> int:
    bpw = window // cell - block + 1
    return bpw * bpw * block * block * orientations


@dataclass
class HogLinearDetector:
    """Sliding-window face detector scoring HOG windows with a linear model.

    ``weights`` has one entry per HOG feature of a ``window`` x ``window``
    patch. A window is a face when ``weights @ hog + bias > threshold``.
    """

    weights: np.ndarray
    bias: float
    window: int = 64
    orientations: int = 9
    cell: int = 8
    block: int = 2
    threshold: float = 0.0
    scale_step: float = 1.2
    min_face: int = 48
    refine_radius: int = 6
    n_refine: int = 3
    min_energy: float = 1e-3
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64).ravel()
        if self.weights.size != self.n_features:
            raise ConfigError(
                f"detector weights have {self.weights.size} entries, HOG window needs {self.n_features}"
            )

    @property
    def blocks_per_window(self) -> int:
        return self.window // self.cell - self.block + 1

    @property
    def n_features(self) -> int:
        return _n_features(self.window, self.cell, self.block, self.orientations)

    def _hog(self, gray: np.ndarray) -> np.ndarray:
        return hog_blocks(gray, self.cell, self.block, self.orientations)

    def patch_features(self, patch: np.ndarray) -> np.ndarray:
        """HOG descriptor of a patch resized to the detector window."""
        gray = patch if patch.ndim == 2 and patch.dtype.kind == "f" else _to_gray(patch)
        return self._hog(_resize_gray(gray, (self.window, self.window))).ravel()

    def score_patch(self, patch: np.ndarray) -> float:
        return float(self.patch_features(patch) @ self.weights + self.bias)

    def _scales(self, shape: tuple[int, int]) -> list[float]:
        scales = []
        s = self.window / self.min_face
        while min(shape) * s >= self.window:
            scales.append(s)
            s /= self.scale_step
        return scales

    def _coarse(self, gray: np.ndarray) -> list[tuple[float, int, int, float]]:
        """Best window per pyramid level as ``(score, x, y, scale)`` in source pixels."""
        bpw = self.blocks_per_window
        w_tensor = self.weights.reshape(bpw, bpw, self.block, self.block, self.orientations)
        out = []
        for s in self._scales(gray.shape):
            hs, ws = int(round(gray.shape[0] * s)), int(round(gray.shape[1] * s))
            blocks = self._hog(_resize_gray(gray, (hs, ws)))
            if blocks.shape[0] < bpw or blocks.shape[1] < bpw:
                continue
            views = sliding_window_view(blocks, w_tensor.shape)
            views = views.reshape(views.shape[0], views.shape[1], *w_tensor.shape)
            scores = np.tensordot(views, w_tensor, axes=5) + self.bias
            r, c = np.unravel_index(int(np.argmax(scores)), scores.shape)
            out.append((float(scores[r, c]), int(round(c * self.cell / s)), int(round(r * self.cell / s)), s))
        return out

    def _score_batch(self, gray: np.ndarray, corners: list[tuple[int, int]], side: int) -> np.ndarray:
        H, W = gray.shape
        scores = np.full(len(corners), -np.inf)
        keep, patches = [], []
        for k, (px, py) in enumerate(corners):
            if px < 0 or py < 0 or px + side > W or py + side > H:
                continue
            patch = gray[py : py + side, px : px + side]
            if patch.std() < self.min_energy:
                continue
            keep.append(k)
            patches.append(_resize_gray(patch, (self.window, self.window)))
        if patches:
            feats = self._hog(np.stack(patches)).reshape(len(patches), -1)
            scores[keep] = feats @ self.weights + self.bias
        return scores

    def _refine(self, gray: np.ndarray, x: int, y: int, side: int) -> tuple[float, int, int]:
        """Grid search around a coarse hit: step 2 over the radius, then step 1."""
        r = self.refine_radius
        grid = [(x + dx, y + dy) for dy in range(-r, r + 1, 2) for dx in range(-r, r + 1, 2)]
        scores = self._score_batch(gray, grid, side)
        k = int(np.argmax(scores))
        best = (float(scores[k]), *grid[k])
        bx, by = grid[k]
        grid = [(bx + dx, by + dy) for dy in (-1, 0, 1) for dx in (-1, 0, 1) if dx or dy]
        scores = self._score_batch(gray, grid, side)
        k = int(np.argmax(scores))
        if scores[k] > best[0]:
            best = (float(scores[k]), *grid[k])
        return best

    def detect(self, image: np.ndarray) -> list[Detection]:
        gray = _to_gray(np.asarray(image))
        if gray.size == 0 or gray.std() < self.min_energy:
            return []
        coarse = sorted(self._coarse(gray), reverse=True)[: self.n_refine]
        found = []
        for _, x, y, s in coarse:
            side = int(round(self.window / s))
            score, rx, ry = self._refine(gray, x, y, side)
            if score > self.threshold:
                found.append(Detection((rx, ry, side, side), score))
        found.sort(key=lambda d: -d.score)
        return found

    def to_dict(self) -> dict:
        return {
            "type": "hog_linear",
            "window": self.window,
            "orientations": self.orientations,
            "cell": self.cell,
            "block": self.block,
            "threshold": self.threshold,
            "scale_step": self.scale_step,
            "min_face": self.min_face,
            "refine_radius": self.refine_radius,
            "n_refine": self.n_refine,
            "bias": float(self.bias),
            "weights": [float(v) for v in self.weights],
            "meta": self.meta,
        }

    def save(self, path: str | Path) -> str:
        """Write the model as JSON and return its sha256."""
        data = json.dumps(self.to_dict(), sort_keys=True).encode()
        Path(path).write_bytes(data)
        return hashlib.sha256(data).hexdigest()

    @classmethod
    def from_dict(cls, d: dict) -> "HogLinearDetector":
        if d.get("type") != "hog_linear":
            raise ConfigError(f"not a hog_linear detector model: type={d.get('type')!r}")
        keys = ("window", "orientations", "cell", "block", "threshold", "scale_step",
                "min_face", "refine_radius", "n_refine")
        return cls(np.asarray(d["weights"]), float(d["bias"]), meta=d.get("meta", {}),
                   **{k: d[k] for k in keys if k in d})


class DlibFrontalDetector:
    """Adapter around dlib's bundled HOG + linear SVM frontal face detector."""

    def __init__(self, upsample: int = 1):
        try:
            import dlib
        except ImportError as exc:
            raise ConfigError("detector 'dlib' requested but dlib is not installed") from exc
        self._detector = dlib.get_frontal_face_detector()
        self.upsample = upsample

    def detect(self, image: np.ndarray) -> list[Detection]:  # pragma: no cover - needs dlib
        rects, scores, _ = self._detector.run(np.ascontiguousarray(image[..., :3]), self.upsample, 0.0)
        dets = [
            Detection((r.left(), r.top(), r.width(), r.height()), float(s)) for r, s in zip(rects, scores)
        ]
        return sorted(dets, key=lambda d: -d.score)


BUILTIN_DETECTOR = Path(__file__).resolve().parent.parent / "assets" / "synthetic_hog.json"


def load_detector(ref: str | Path, sha256: str | None = None) -> FaceDetector:
    """Load a detector from a model file.

    ``"dlib"`` selects dlib's bundled frontal model and ``"synthetic"`` the
    packaged HOG model trained on rendered portraits. When ``sha256`` is
    given the model file must match it.
    """
    if str(ref) == "dlib":
        return DlibFrontalDetector()
    path = BUILTIN_DETECTOR if str(ref) == "synthetic" else Path(ref)
    if not path.is_file():
        raise ConfigError(f"detector model not found: {path}")
    data = path.read_bytes()
    if sha256 is not None and hashlib.sha256(data).hexdigest() != sha256:
        raise ConfigError(f"detector model {path} does not match pinned sha256")
    return HogLinearDetector.from_dict(json.loads(data))


def train_hog_detector(
    positives: Sequence[np.ndarray],
    negatives: Sequence[np.ndarray],
    hard_negative_images: Sequence[np.ndarray] = (),
    c: float = 0.05,
    seed: int = 0,
    **detector_kwargs,
) -> HogLinearDetector:
    """Fit the linear window classifier with a linear SVM.

    ``positives`` and ``negatives`` are image patches (any size, resized to
    the window). ``hard_negative_images`` contain no faces; strong false
    detections found on them are added as negatives for a second round.
    """
    from sklearn.svm import LinearSVC

    shape = {"window": 64, "cell": 8, "block": 2, "orientations": 9}
    shape.update({k: v for k, v in detector_kwargs.items() if k in shape})
    probe = HogLinearDetector(np.zeros(_n_features(**shape)), 0.0, **detector_kwargs)
    pos = [probe.patch_features(p) for p in positives]
    neg = [probe.patch_features(p) for p in negatives]

    def fit(neg_feats):
        X = np.vstack([np.array(pos), np.array(neg_feats)])
        y = np.r_[np.ones(len(pos)), -np.ones(len(neg_feats))]
        clf = LinearSVC(C=c, random_state=seed, max_iter=20000, dual=True)
        clf.fit(X, y)
        return HogLinearDetector(clf.coef_.ravel(), float(clf.intercept_[0]), **detector_kwargs)

    det = fit(neg)
    for img in hard_negative_images:
        gray = _to_gray(img)
        for score, x, y, s in det._coarse(gray):
            if score > -0.5:
                side = int(round(det.window / s))
                neg.append(det.patch_features(gray[y : y + side, x : x + side]))
    if hard_negative_images:
        det = fit(neg)
    det.meta = {"n_pos": len(pos), "n_neg": len(neg), "c": c, "seed": seed}
    return det
