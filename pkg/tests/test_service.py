import io

import numpy as np
import pytest
from fastapi.testclient import TestClient
from PIL import Image

from facebmi.dataset import BmiCategory
from facebmi.inference import FeatureConfig, InferencePipeline
from facebmi.regression import RidgeModel
from facebmi.service import HistoryStore, PredictionRecord, create_app
from facebmi.synth import blank_image, render_face


def _png(arr: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(arr).save(buf, format="PNG")
    return buf.getvalue()


@pytest.fixture(scope="module")
def constant_model(tmp_path_factory):
    path = tmp_path_factory.mktemp("model") / "const.bmimodel"
    feats = FeatureConfig("stub", (16, 16))
    RidgeModel(np.zeros(16 * 16 * 3), 24.0, 1.0, "stub").save(
        path, extra={"pipeline": {"margin": 0.1, "detector_model": "synthetic", "features": feats.to_dict()}})
    return path


@pytest.fixture(scope="module")
def face_png():
    return _png(render_face(27.0, np.random.default_rng(3)).image)


@pytest.fixture
def client(constant_model, tmp_path):
    return TestClient(create_app(constant_model, tmp_path / "h.sqlite3"))


def _post(client, data, user_id=None):
    form = {"user_id": user_id} if user_id else {}
    return client.post("/predict", files={"image": ("x.png", data, "image/png")}, data=form)


def test_constant_model(client, face_png):
    r = _post(client, face_png)
    assert r.status_code == 200
    body = r.json()
    assert body["bmi"] == 24.0 and body["category"] == "normal"
    assert body["model_id"].startswith("ridge:")
    assert _post(client, face_png).json() == body


def test_blank_image_is_fte(client):
    r = _post(client, _png(blank_image()))
    assert r.status_code == 422 and r.json()["error_code"] == "FTE"


def test_undecodable_payload(client):
    r = _post(client, b"definitely not a png")
    assert r.status_code == 400 and r.json()["error_code"] == "BAD_IMAGE"
    r = client.post("/predict", data={"user_id": "u"})
    assert r.status_code == 400 and r.json()["error_code"] == "BAD_IMAGE"


def test_no_model(tmp_path, face_png):
    c = TestClient(create_app(tmp_path / "missing.bmimodel", tmp_path / "h.sqlite3"))
    r = _post(c, face_png)
    assert r.status_code == 503 and r.json()["error_code"] == "NO_MODEL"


def test_store_down(constant_model, tmp_path, face_png):
    c = TestClient(create_app(constant_model, tmp_path / "no" / "such" / "dir" / "h.sqlite3"))
    assert _post(c, face_png).status_code == 200
    r = _post(c, face_png, user_id="alice")
    assert r.status_code == 503 and r.json()["error_code"] == "STORE_DOWN"
    assert c.get("/history/alice").json()["error_code"] == "STORE_DOWN"


def test_non_positive_prediction(tmp_path, face_png):
    path = tmp_path / "neg.bmimodel"
    RidgeModel(np.zeros(16 * 16 * 3), -3.0, 1.0, "stub").save(
        path, extra={"pipeline": {"features": FeatureConfig("stub", (16, 16)).to_dict()}})
    r = _post(TestClient(create_app(path, tmp_path / "h.sqlite3")), face_png)
    assert r.status_code == 500 and r.json()["error_code"] == "BAD_PREDICTION"


def test_history_via_http(client, face_png):
    for _ in range(2):
        assert _post(client, face_png, user_id="bob").status_code == 200
    hist = client.get("/history/bob").json()
    assert len(hist) == 2
    assert hist[0]["timestamp"] < hist[1]["timestamp"]
    assert hist[0]["category"] == "normal" and hist[0]["bmi"] == 24.0
    assert client.get("/history/nobody").json() == []


def test_matches_library_pipeline(constant_model, face_png, tmp_path):
    pipe = InferencePipeline.from_model(constant_model)
    c = TestClient(create_app(store_path=tmp_path / "h.sqlite3", pipeline=pipe))
    assert _post(c, face_png).json()["bmi"] == pipe.predict_image(face_png)


def test_store_ordering_and_restart(tmp_path):
    path = tmp_path / "h.sqlite3"
    store = HistoryStore(path)
    base = 1_700_000_000_000_000
    for i in range(100):
        store.log("carol", 20.0 + i / 10, "ridge:abc", ts_us=base)  # same clock reading every time
    store.log("dave", 31.0, "ridge:abc")
    reopened = HistoryStore(path)
    hist = reopened.history("carol")
    assert len(hist) == 100
    assert [r.bmi for r in hist] == [20.0 + i / 10 for i in range(100)]
    stamps = [r.timestamp for r in hist]
    assert stamps == sorted(stamps) and len(set(stamps)) == 100
    assert reopened.history("dave")[0].category == BmiCategory.MODERATELY_OBESE
    assert reopened.history("erin") == []


def test_record_invariants():
    with pytest.raises(ValueError):
        PredictionRecord("", "2024-01-01T00:00:00.000000Z", 20.0, BmiCategory.NORMAL, "m")
    with pytest.raises(ValueError):
        PredictionRecord("u", "2024-01-01T00:00:00.000000Z", 0.0, BmiCategory.NORMAL, "m")
    with pytest.raises(ValueError):
        HistoryStore(":memory:").log("", 20.0, "m")
