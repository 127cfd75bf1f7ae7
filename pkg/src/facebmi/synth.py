"""Procedural portrait renderer used for fixtures and the synthetic benchmark.

Each render is a single cartoon frontal face on a cluttered background. BMI is
encoded by construction: face width grows and skin brightness drops linearly
with BMI, so a linear model on pixels can recover it.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

from .dataset import DatasetTag, FaceSample, Gender, write_manifest

BMI_LOW, BMI_HIGH = 17.0, 48.0

_SKIN_TONES = np.array(
    [[224, 172, 137], [198, 134, 96], [241, 194, 160], [160, 110, 72], [120, 80, 52]],
    dtype=float,
)
_HAIR_TONES = np.array([[30, 22, 18], [60, 40, 25], [15, 15, 15], [90, 60, 30], [50, 50, 55]], dtype=float)


@dataclass(frozen=True)
class RenderedFace:
    image: np.ndarray  # H x W x 3 uint8
    bbox: tuple[int, int, int, int]  # x, y, w, h of the annotated face square
    bmi: float


def bmi_signal(bmi: float) -> float:
    return float(np.clip((bmi - BMI_LOW) / (BMI_HIGH - BMI_LOW), 0.0, 1.0))


def render_background(rng: np.random.Generator, size: tuple[int, int]) -> Image.Image:
    h, w = size
    base = rng.uniform(40, 215, size=3)
    tilt = rng.uniform(-50, 50, size=3)
    ramp = np.linspace(-0.5, 0.5, w)[None, :, None] * tilt[None, None, :]
    ramp = ramp + np.linspace(-0.5, 0.5, h)[:, None, None] * rng.uniform(-40, 40, size=3)
    arr = base[None, None, :] + ramp + rng.normal(0, 3.0, size=(h, w, 3))
    img = Image.fromarray(np.clip(arr, 0, 255).astype(np.uint8))
    draw = ImageDraw.Draw(img)
    for _ in range(int(rng.integers(0, 4))):
        x0, y0 = rng.integers(0, w), rng.integers(0, h)
        x1, y1 = x0 + rng.integers(8, w // 2), y0 + rng.integers(8, h // 2)
        color = tuple(int(c) for c in rng.integers(0, 256, size=3))
        if rng.random() < 0.5:
            draw.rectangle([x0, y0, x1, y1], fill=color)
        else:
            draw.line([x0, y0, x1, y1], fill=color, width=int(rng.integers(1, 4)))
    return img


def draw_face(
    img: Image.Image,
    center: tuple[float, float],
    height: float,
    bmi: float,
    rng: np.random.Generator,
) -> tuple[int, int, int, int]:
    """Draw one face onto ``img`` and return its annotated bounding square."""
    t = bmi_signal(bmi)
    cx, cy = center
    h = height
    w = h * (0.62 + 0.30 * t)
    skin = _SKIN_TONES[rng.integers(len(_SKIN_TONES))] * (1.12 - 0.30 * t)
    skin = tuple(int(c) for c in np.clip(skin + rng.normal(0, 3, 3), 0, 255))
    hair = tuple(int(c) for c in _HAIR_TONES[rng.integers(len(_HAIR_TONES))])
    draw = ImageDraw.Draw(img)

    draw.ellipse([cx - 0.55 * w, cy - 0.56 * h, cx + 0.55 * w, cy + 0.05 * h], fill=hair)
    draw.ellipse([cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2], fill=skin)
    draw.rectangle([cx - 0.12 * w, cy + 0.46 * h, cx + 0.12 * w, cy + 0.5 * h + 6], fill=skin)

    dark = tuple(int(c * 0.55) for c in skin)
    eye_y = cy - 0.08 * h
    ew, eh = 0.13 * w, 0.055 * h
    for side in (-1, 1):
        ex = cx + side * 0.21 * w
        draw.ellipse([ex - ew, eye_y - eh, ex + ew, eye_y + eh], fill=(245, 245, 240))
        draw.ellipse([ex - 0.45 * ew, eye_y - eh, ex + 0.45 * ew, eye_y + eh], fill=(35, 25, 20))
        draw.line([ex - ew, eye_y - 2.3 * eh, ex + ew, eye_y - 2.6 * eh], fill=hair, width=max(2, int(h / 40)))
    draw.polygon(
        [(cx, cy - 0.02 * h), (cx - 0.06 * w, cy + 0.12 * h), (cx + 0.06 * w, cy + 0.12 * h)], fill=dark
    )
    mw = 0.19 * w * (1.0 + 0.2 * rng.uniform(-1, 1))
    draw.ellipse([cx - mw, cy + 0.22 * h, cx + mw, cy + 0.29 * h], fill=(150, 50, 55))

    side = int(round(h))
    return int(round(cx - h / 2)), int(round(cy - h / 2)), side, side


def render_face(
    bmi: float,
    rng: np.random.Generator,
    size: tuple[int, int] = (160, 160),
    face_height: float | None = None,
    offset: tuple[int, int] = (0, 0),
) -> RenderedFace:
    """Render a portrait; ``offset`` translates the face (not the background)."""
    H, W = size
    if face_height is None:
        face_height = float(rng.uniform(0.45, 0.65) * min(H, W))
    img = render_background(rng, size)
    half = face_height / 2
    cx = rng.uniform(half + 4, W - half - 4) + offset[0]
    cy = rng.uniform(half + 4, H - half - 4) + offset[1]
    bbox = draw_face(img, (cx, cy), face_height, bmi, rng)
    return RenderedFace(np.asarray(img), bbox, float(bmi))


def render_face_at(
    bmi: float,
    center: tuple[float, float],
    face_height: float,
    size: tuple[int, int] = (160, 160),
    seed: int = 0,
    background: tuple[int, int, int] | None = (128, 128, 128),
) -> RenderedFace:
    """Deterministic placement, used by translation tests."""
    rng = np.random.default_rng(seed)
    if background is None:
        img = render_background(rng, size)
    else:
        img = Image.new("RGB", (size[1], size[0]), background)
    bbox = draw_face(img, center, face_height, bmi, rng)
    return RenderedFace(np.asarray(img), bbox, float(bmi))


def blank_image(size: tuple[int, int] = (160, 160), value: int = 0) -> np.ndarray:
    return np.full((*size, 3), value, dtype=np.uint8)


def make_synthetic_dataset(
    outdir: str | Path,
    n: int,
    seed: int = 0,
    n_blank: int = 0,
    size: tuple[int, int] = (160, 160),
    manifest_name: str = "manifest.csv",
) -> tuple[Path, list[FaceSample], dict[str, tuple[int, int, int, int]]]:
    """Write ``n`` rendered portraits plus ``n_blank`` faceless images and a manifest.

    Returns the manifest path, the samples, and the annotated face boxes by id.
    """
    outdir = Path(outdir)
    (outdir / "images").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    samples, boxes = [], {}
    for i in range(n):
        bmi = round(float(rng.uniform(BMI_LOW + 1, BMI_HIGH - 1)), 2)
        face = render_face(bmi, rng, size=size)
        sid = f"syn{i:05d}"
        ref = f"images/{sid}.png"
        Image.fromarray(face.image).save(outdir / ref)
        gender = Gender.MALE if i % 2 == 0 else Gender.FEMALE
        samples.append(FaceSample(sid, str((outdir / ref).resolve()), gender, bmi, DatasetTag.SYNTHETIC))
        boxes[sid] = face.bbox
    for j in range(n_blank):
        sid = f"blank{j:04d}"
        ref = f"images/{sid}.png"
        Image.fromarray(blank_image(size, value=int(rng.integers(0, 256)))).save(outdir / ref)
        bmi = round(float(rng.uniform(BMI_LOW + 1, BMI_HIGH - 1)), 2)
        gender = Gender.MALE if j % 2 == 0 else Gender.FEMALE
        samples.append(FaceSample(sid, str((outdir / ref).resolve()), gender, bmi, DatasetTag.SYNTHETIC))
    manifest = outdir / manifest_name
    write_manifest(samples, manifest)
    return manifest, samples, boxes
