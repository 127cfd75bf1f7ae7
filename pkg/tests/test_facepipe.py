import io
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from PIL import Image

from facebmi.dataset import DatasetTag, FaceSample, Gender
from facebmi.exceptions import ConfigError, DegenerateCropError, ImageReadError
from facebmi.facepipe import (
    IMAGENET_NORM,
    UNIT_NORM,
    FaceCrop,
    HogLinearDetector,
    NormSpec,
    crop_from_bbox,
    detect_face,
    enroll,
    expand_bbox,
    load_detector,
    preprocess,
    read_image,
)
from facebmi.facepipe.hog import hog_blocks
from facebmi.synth import blank_image, render_face, render_face_at


def iou(a, b):
    ix = max(0, min(a[0] + a[2], b[0] + b[2]) - max(a[0], b[0]))
    iy = max(0, min(a[1] + a[3], b[1] + b[3]) - max(a[1], b[1]))
    inter = ix * iy
    return inter / (a[2] * a[3] + b[2] * b[3] - inter)


def hog_loop(gray, cell=8, block=2, nbins=9):
    """Scalar re-implementation of the HOG descriptor."""
    H, W = gray.shape
    cr, cc = H // cell, W // cell
    hist = np.zeros((cr, cc, nbins))
    width = 180.0 / nbins
    for r in range(cr * cell):
        for c in range(cc * cell):
            gy = gray[r + 1, c] - gray[r - 1, c] if 0 < r < cr * cell - 1 else 0.0
            gx = gray[r, c + 1] - gray[r, c - 1] if 0 < c < cc * cell - 1 else 0.0
            mag = math.hypot(gx, gy)
            angle = math.degrees(math.atan2(gy, gx)) % 180.0
            pos = angle / width - 0.5
            lo = math.floor(pos)
            frac = pos - lo
            hist[r // cell, c // cell, lo % nbins] += mag * (1 - frac)
            hist[r // cell, c // cell, (lo + 1) % nbins] += mag * frac
    hist /= cell * cell
    out = np.zeros((cr - block + 1, cc - block + 1, block, block, nbins))
    for i in range(cr - block + 1):
        for j in range(cc - block + 1):
            v = hist[i : i + block, j : j + block].copy()
            v = np.minimum(v / math.sqrt((v**2).sum() + 1e-10), 0.2)
            out[i, j] = v / math.sqrt((v**2).sum() + 1e-10)
    return out


def test_hog_matches_loop_oracle(rng):
    gray = rng.random((33, 41))
    np.testing.assert_allclose(hog_blocks(gray), hog_loop(gray), atol=1e-12)
    batch = rng.random((3, 24, 24))
    stacked = hog_blocks(batch)
    for k in range(3):
        np.testing.assert_allclose(stacked[k], hog_loop(batch[k]), atol=1e-12)


@pytest.mark.parametrize("value", [0, 255, 127])
def test_uniform_image_has_no_face(detector, value):
    assert detect_face(blank_image((160, 160), value), detector) is None


def test_detection_overlaps_annotated_face(detector):
    rng = np.random.default_rng(2024)
    for _ in range(12):
        face = render_face(float(rng.uniform(18, 46)), rng)
        crop = detect_face(face.image, detector, "f")
        assert crop is not None
        assert iou(crop.face_bbox, face.bbox) >= 0.5
        x, y, w, h = crop.bbox
        assert x >= 0 and y >= 0 and w > 0 and h > 0
        assert x + w <= face.image.shape[1] and y + h <= face.image.shape[0]


def test_detection_is_deterministic(detector):
    face = render_face(30.0, np.random.default_rng(1))
    a, b = detect_face(face.image, detector), detect_face(face.image, detector)
    assert a.bbox == b.bbox and a.detector_score == b.detector_score


@settings(max_examples=30)
@given(st.integers(-12, 12), st.integers(-12, 12))
def test_detection_translation_consistent(detector, dx, dy):
    base = render_face_at(30.0, (80, 80), 80, seed=5)
    moved = render_face_at(30.0, (80 + dx, 80 + dy), 80, seed=5)
    b0 = detector.detect(base.image)[0].bbox
    b1 = detector.detect(moved.image)[0].bbox
    assert abs((b1[0] - b0[0]) - dx) <= 2 and abs((b1[1] - b0[1]) - dy) <= 2


def test_highest_scoring_detection_is_kept(detector):
    face = render_face(25.0, np.random.default_rng(8))
    dets = detector.detect(face.image)
    scores = [d.score for d in dets]
    assert scores == sorted(scores, reverse=True)
    assert detect_face(face.image, detector).detector_score == dets[0].score


def test_corrupt_image_is_read_error(tmp_path):
    p = tmp_path / "bad.png"
    p.write_bytes(b"not an image")
    with pytest.raises(ImageReadError):
        read_image(p)
    with pytest.raises(ImageReadError):
        read_image(tmp_path / "missing.png")
    buf = io.BytesIO()
    Image.fromarray(blank_image((10, 12))).save(buf, "PNG")
    assert read_image(buf.getvalue()).shape == (10, 12, 3)


def test_detect_face_rejects_empty_raster(detector):
    with pytest.raises(ImageReadError):
        detect_face(np.zeros((0, 10, 3), np.uint8), detector)


def test_expand_bbox_margin_and_clipping():
    assert expand_bbox((50, 40, 100, 80), 0.10, (400, 400)) == (40, 32, 120, 96)
    assert expand_bbox((0, 0, 100, 100), 0.10, (105, 300)) == (0, 0, 110, 105)
    crop = crop_from_bbox(np.zeros((400, 400, 3), np.uint8), (50, 40, 100, 80))
    assert crop.pixels.shape == (96, 120, 3) and crop.face_bbox == (50, 40, 100, 80)


def test_preprocess_shape_and_range(rng):
    crop = rng.integers(0, 256, (100, 80, 3)).astype(np.uint8)
    out = preprocess(crop, (224, 224), UNIT_NORM)
    assert out.shape == (224, 224, 3) and out.dtype == np.float32
    assert out.min() >= 0 and out.max() <= 1


def test_preprocess_same_size_only_rescales(rng):
    crop = rng.integers(0, 256, (224, 224, 3)).astype(np.uint8)
    np.testing.assert_array_equal(preprocess(crop, (224, 224)), crop.astype(np.float32) / np.float32(255))


def test_preprocess_mean_subtraction_centers_channels():
    face = render_face(28.0, np.random.default_rng(3))
    crop = FaceCrop("f", face.image[20:120, 30:110].copy(), (30, 20, 80, 100), 1.0)
    unit = preprocess(crop, (64, 64), UNIT_NORM)
    means = tuple(float(m) for m in unit.reshape(-1, 3).mean(axis=0))
    centered = preprocess(crop, (64, 64), NormSpec("fixture", means, (1.0, 1.0, 1.0)))
    assert np.all(np.abs(centered.reshape(-1, 3).mean(axis=0)) < 1e-3)
    scaled = preprocess(crop, (64, 64), IMAGENET_NORM)
    np.testing.assert_allclose(scaled, (unit - np.float32(IMAGENET_NORM.mean)) / np.float32(IMAGENET_NORM.std),
                               rtol=1e-6, atol=1e-6)


@given(st.integers(1, 90), st.integers(1, 90), st.integers(1, 60), st.integers(1, 60))
def test_preprocess_output_shape_property(h, w, th, tw):
    crop = np.full((h, w, 3), 100, np.uint8)
    assert preprocess(crop, (th, tw)).shape == (th, tw, 3)


def test_degenerate_crop():
    with pytest.raises(DegenerateCropError):
        FaceCrop("x", np.zeros((0, 5, 3), np.uint8), (3, 3, 0, 5), 0.0)
    with pytest.raises(DegenerateCropError):
        preprocess(np.zeros((0, 4, 3), np.uint8), (8, 8))


def _write(tmp_path, name, arr):
    p = tmp_path / name
    Image.fromarray(arr).save(p)
    return str(p)


def test_enroll_faces_and_blanks(tmp_path, detector):
    rng = np.random.default_rng(4)
    samples = []
    for i in range(5):
        ref = _write(tmp_path, f"f{i}.png", render_face(25 + i, rng).image)
        samples.append(FaceSample(f"f{i}", ref, Gender.MALE, 25 + i, DatasetTag.SYNTHETIC))
    for i in range(2):
        ref = _write(tmp_path, f"b{i}.png", blank_image((120, 120), 40 * i))
        samples.append(FaceSample(f"b{i}", ref, Gender.FEMALE, 22, DatasetTag.SYNTHETIC))
    samples.append(FaceSample("lost", str(tmp_path / "missing.png"), Gender.MALE, 22, DatasetTag.SYNTHETIC))
    result = enroll(samples, detector)
    assert [c.source_sample_id for c in result.crops] == [f"f{i}" for i in range(5)]
    assert result.fte_ids == ["b0", "b1"] and result.fte_count == 2
    assert result.io_errors == ["lost"]
    result.write_report(tmp_path / "fte.json")
    assert json.loads((tmp_path / "fte.json").read_text()) == {"fte": ["b0", "b1"], "io_errors": ["lost"]}
    parallel = enroll(samples, detector, n_jobs=3)
    assert [c.bbox for c in parallel.crops] == [c.bbox for c in result.crops]
    assert parallel.fte_ids == result.fte_ids


def test_enroll_empty(detector):
    result = enroll([], detector)
    assert result.crops == [] and result.fte_ids == [] and result.io_errors == []


def test_enrollment_conservation(synthetic_dataset, detector):
    _, samples, _ = synthetic_dataset
    result = enroll(samples, detector)
    assert len(result.crops) + result.fte_count + len(result.io_errors) == len(samples)
    assert not {c.source_sample_id for c in result.crops} & set(result.fte_ids)
    assert {"blank0000", "blank0001"} <= set(result.fte_ids)


def test_detector_file_roundtrip_and_pinning(tmp_path, detector):
    sha = detector.save(tmp_path / "det.json")
    again = load_detector(tmp_path / "det.json", sha256=sha)
    assert isinstance(again, HogLinearDetector)
    np.testing.assert_array_equal(again.weights, detector.weights)
    with pytest.raises(ConfigError):
        load_detector(tmp_path / "det.json", sha256="0" * 64)
    with pytest.raises(ConfigError):
        load_detector(tmp_path / "absent.json")
    with pytest.raises(ConfigError):
        HogLinearDetector(np.zeros(5), 0.0)
