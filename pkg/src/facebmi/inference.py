"""Image -> BMI composition shared by the experiment runner and the HTTP service."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .customcnn import CustomCNN, custom_cnn_from_arrays, predict_cnn
from .exceptions import FaceBMIError, ShapeError
from .facepipe.detector import FaceDetector, load_detector
from .facepipe.pipeline import DEFAULT_MARGIN, UNIT_NORM, FaceCrop, detect_face, preprocess, read_image
from .features.backbones import file_sha256, load_network, weights_path
from .features.extractor import extract_batch
from .features.registry import BackboneSpec, get_backbone, stub_spec
from .modelio import load_model
from .regression.ridge import RidgeModel
from .regression.svr import SvrModel


class NoFaceError(FaceBMIError):
    """No face was detected in the submitted image."""


@dataclass
class FeatureConfig:
    backbone: str = "stub"
    stub_size: tuple[int, int] = (32, 32)
    l2_normalize: bool = False
    random_init: bool = False
    seed: int = 0
    weights_sha256: str | None = None

    def __post_init__(self):
        self.stub_size = tuple(int(v) for v in self.stub_size)

    @property
    def spec(self) -> BackboneSpec:
        return stub_spec(self.stub_size) if self.backbone == "stub" else get_backbone(self.backbone)

    @property
    def tag(self) -> str:
        """Cache key naming everything that changes the feature values."""
        parts = [self.backbone]
        if self.backbone == "stub":
            parts.append("x".join(map(str, self.stub_size)))
        elif self.random_init:
            parts.append(f"rand{self.seed}")
        elif self.weights_sha256:
            parts.append(self.weights_sha256[:12])
        if self.l2_normalize:
            parts.append("l2")
        return "-".join(parts)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["stub_size"] = list(self.stub_size)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureConfig":
        return cls(**d)


class FeatureComputer:
    """Preprocess crops and run a backbone; the network is loaded on first use."""

    def __init__(self, config: FeatureConfig, weights_dir: str | Path | None = None, chunk: int = 16):
        self.config = config
        self.weights_dir = weights_dir
        self.chunk = chunk
        self._net = None
        spec = config.spec
        if spec.backbone_id != "stub" and not config.random_init and config.weights_sha256 is None:
            if weights_dir is not None and weights_path(spec, weights_dir).is_file():
                config.weights_sha256 = file_sha256(weights_path(spec, weights_dir))

    @property
    def net(self):
        if self._net is None:
            c = self.config
            self._net = load_network(c.spec, self.weights_dir, random_init=c.random_init, seed=c.seed,
                                     sha256=None if c.random_init else c.weights_sha256)
        return self._net

    def tensors(self, crops: Sequence[FaceCrop]) -> np.ndarray:
        spec = self.config.spec
        return np.stack([preprocess(c, spec.input_size, spec.norm) for c in crops])

    def compute(self, crops: Sequence[FaceCrop]) -> np.ndarray:
        spec = self.config.spec
        if not crops:
            return np.zeros((0, spec.feature_dim), np.float32)
        feats = extract_batch(self.tensors(crops), spec, None if spec.backbone_id == "stub" else self.net, self.chunk)
        if self.config.l2_normalize:
            feats = feats / np.maximum(np.linalg.norm(feats, axis=1, keepdims=True), np.float32(1e-12))
        return feats


@dataclass
class Predictor:
    """A trained head plus the recipe that produces its inputs from face crops."""

    head: RidgeModel | SvrModel | CustomCNN
    kind: str
    features: FeatureConfig | None = None
    weights_dir: str | Path | None = None
    model_id: str = ""
    pipeline: dict = field(default_factory=dict)

    def __post_init__(self):
        self._computer = FeatureComputer(self.features, self.weights_dir) if self.features else None

    @classmethod
    def from_file(cls, path: str | Path, weights_dir: str | Path | None = None) -> "Predictor":
        header, arrays = load_model(path)
        kind = header["type"]
        pipeline = header.get("extra", {}).get("pipeline", {})
        feats = FeatureConfig.from_dict(pipeline["features"]) if "features" in pipeline else None
        if kind == "ridge":
            head = RidgeModel.from_arrays(header, arrays)
        elif kind == "svr":
            head = SvrModel.from_arrays(header, arrays)
        elif kind == "custom_cnn":
            head = custom_cnn_from_arrays(header, arrays)
            feats = None
        else:
            raise ShapeError(f"unsupported model type {kind!r}")
        if kind != "custom_cnn" and feats is None:
            feats = FeatureConfig(backbone=header.get("backbone_id") or "stub")
            if feats.backbone == "stub":
                side = int(round((header["dim"] / 3) ** 0.5))
                feats.stub_size = (side, side)
        model_id = f"{kind}:{header['checksum'][:12]}"
        return cls(head, kind, feats, weights_dir, model_id, pipeline)

    @property
    def margin(self) -> float:
        return float(self.pipeline.get("margin", DEFAULT_MARGIN))

    def predict_features(self, X: np.ndarray) -> np.ndarray:
        return np.asarray(self.head.predict(np.asarray(X, dtype=np.float64)), dtype=np.float64)

    def predict_crops(self, crops: Sequence[FaceCrop]) -> np.ndarray:
        if self.kind == "custom_cnn":
            size = self.head.spec.input_size
            if not crops:
                return np.zeros(0)
            x = np.stack([preprocess(c, size, UNIT_NORM) for c in crops])
            return np.atleast_1d(predict_cnn(self.head, x))
        return self.predict_features(self._computer.compute(crops))


@dataclass
class InferencePipeline:
    detector: FaceDetector
    predictor: Predictor
    margin: float = DEFAULT_MARGIN

    @classmethod
    def from_model(cls, model_path: str | Path, detector: str | FaceDetector | None = None,
                   weights_dir: str | Path | None = None) -> "InferencePipeline":
        predictor = Predictor.from_file(model_path, weights_dir)
        if detector is None or isinstance(detector, str):
            ref = detector or predictor.pipeline.get("detector_model", "synthetic")
            detector = load_detector(ref)
        return cls(detector, predictor, predictor.margin)

    def predict_image(self, image: np.ndarray | bytes | str | Path) -> float:
        """BMI for the most confident face in ``image``; raises NoFaceError when none is found."""
        if not isinstance(image, np.ndarray):
            image = read_image(image)
        crop = detect_face(image, self.detector, margin=self.margin)
        if crop is None:
            raise NoFaceError("no face detected")
        bmi = float(self.predictor.predict_crops([crop])[0])
        if not np.isfinite(bmi):
            raise ValueError("prediction is not finite")
        return bmi
