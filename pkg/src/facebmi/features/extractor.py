"""Deep-feature extraction from preprocessed face tensors."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from sklearn.base import BaseEstimator, TransformerMixin

from ..exceptions import ShapeError
from .backbones import load_network
from .registry import BackboneSpec, get_backbone, stub_spec


@dataclass(frozen=True, eq=False)
class FeatureVector:
    backbone_id: str
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim != 1:
            raise ShapeError("feature values must be a vector")
        if not np.all(np.isfinite(v)):
            raise ValueError("feature vector has non-finite entries")

    @property
    def dim(self) -> int:
        return int(self.values.shape[0])


def _check_batch(batch: np.ndarray, spec: BackboneSpec) -> np.ndarray:
    batch = np.asarray(batch, dtype=np.float32)
    if batch.ndim == 3:
        batch = batch[None]
    h, w = spec.input_size
    if batch.ndim != 4 or batch.shape[1:] != (h, w, 3):
        raise ShapeError(f"{spec.backbone_id} expects N x {h} x {w} x 3 input, got {batch.shape}")
    return batch


@torch.no_grad()
def extract_batch(batch: np.ndarray, spec: BackboneSpec, net: torch.nn.Module, chunk: int = 16) -> np.ndarray:
    """Features for an ``N x H x W x 3`` batch as an ``N x feature_dim`` float32 array."""
    batch = _check_batch(batch, spec)
    if spec.backbone_id == "stub":
        return batch.reshape(len(batch), -1).copy()
    out = []
    for i in range(0, len(batch), chunk):
        x = torch.from_numpy(np.ascontiguousarray(batch[i : i + chunk].transpose(0, 3, 1, 2)))
        out.append(net(x).reshape(len(x), -1).numpy().astype(np.float32))
    feats = np.concatenate(out) if out else np.zeros((0, spec.feature_dim), np.float32)
    if feats.shape[1] != spec.feature_dim:
        raise ShapeError(f"{spec.backbone_id} produced {feats.shape[1]} features, registry says {spec.feature_dim}")
    return feats


def extract_features(crop_tensor: np.ndarray, spec: BackboneSpec, net: torch.nn.Module) -> FeatureVector:
    return FeatureVector(spec.backbone_id, extract_batch(crop_tensor, spec, net)[0])


class FeatureExtractor(TransformerMixin, BaseEstimator):
    """Transformer mapping preprocessed ``N x H x W x 3`` tensors to deep features.

    Parameters
    ----------
    backbone : str
        Registry id.
    weights_dir : str, optional
        Directory holding ``<backbone>.safetensors``.
    random_init : bool
        Skip weight loading and keep a seeded random initialization.
    stub_size : tuple, optional
        Input size of the identity ``stub`` backbone.
    l2_normalize : bool
        Scale every feature vector to unit L2 norm.
    """

    def __init__(self, backbone="resnet50", weights_dir=None, random_init=False, seed=0,
                 stub_size=(32, 32), l2_normalize=False, chunk=16):
        self.backbone = backbone
        self.weights_dir = weights_dir
        self.random_init = random_init
        self.seed = seed
        self.stub_size = stub_size
        self.l2_normalize = l2_normalize
        self.chunk = chunk

    @property
    def spec_(self) -> BackboneSpec:
        if self.backbone == "stub":
            return stub_spec(tuple(self.stub_size))
        return get_backbone(self.backbone)

    def fit(self, X=None, y=None):
        self.net_ = load_network(self.spec_, self.weights_dir, random_init=self.random_init, seed=self.seed)
        self.n_features_out_ = self.spec_.feature_dim
        return self

    def transform(self, X):
        if not hasattr(self, "net_"):
            self.fit()
        feats = extract_batch(X, self.spec_, self.net_, self.chunk)
        if self.l2_normalize:
            norms = np.linalg.norm(feats, axis=1, keepdims=True)
            feats = feats / np.maximum(norms, np.float32(1e-12))
        return feats
