"""Training a HOG detector on rendered portraits (fixtures and demos only)."""
from __future__ import annotations

import numpy as np

from ..synth import BMI_HIGH, BMI_LOW, render_background, render_face
from .detector import HogLinearDetector, train_hog_detector


def _iou(a, b) -> float:
    ax, ay, aw, ah = a
    bx, by, bw, bh = b
    ix = max(0, min(ax + aw, bx + bw) - max(ax, bx))
    iy = max(0, min(ay + ah, by + bh) - max(ay, by))
    inter = ix * iy
    return inter / float(aw * ah + bw * bh - inter)


def _square(img, x, y, side):
    H, W = img.shape[:2]
    if x < 0 or y < 0 or x + side > W or y + side > H or side < 8:
        return None
    return img[y : y + side, x : x + side]


def train_synthetic_detector(n_faces: int = 300, n_backgrounds: int = 120, seed: int = 0) -> HogLinearDetector:
    """Fit a detector for the synthetic renderer's faces.

    Negatives include shifted and mis-scaled windows around each face so the
    classifier localises the annotated square rather than any face-like blob.
    """
    rng = np.random.default_rng(seed)
    positives, negatives = [], []
    for _ in range(n_faces):
        face = render_face(float(rng.uniform(BMI_LOW, BMI_HIGH)), rng)
        img = face.image
        x, y, s, _ = face.bbox
        patch = _square(img, x, y, s)
        if patch is not None:
            positives.append(patch)
            positives.append(patch[:, ::-1])
        for _ in range(6):
            scale = rng.choice([0.5, 0.7, 1.0, 1.4, 2.0])
            side = int(s * scale)
            nx = int(x + s / 2 - side / 2 + rng.integers(-s, s + 1) * (0.6 if scale == 1.0 else 0.3))
            ny = int(y + s / 2 - side / 2 + rng.integers(-s, s + 1) * (0.6 if scale == 1.0 else 0.3))
            cand = _square(img, nx, ny, side)
            if cand is not None and _iou((nx, ny, side, side), face.bbox) < 0.45:
                negatives.append(cand)
    backgrounds = []
    for _ in range(n_backgrounds):
        bg = np.asarray(render_background(rng, (160, 160)))
        backgrounds.append(bg)
        for _ in range(4):
            side = int(rng.integers(40, 150))
            nx, ny = int(rng.integers(0, 160 - side + 1)), int(rng.integers(0, 160 - side + 1))
            negatives.append(bg[ny : ny + side, nx : nx + side])
    return train_hog_detector(positives, negatives, hard_negative_images=backgrounds, seed=seed)
