"""Backbone registry: input geometry, feature width and normalization per network."""
from __future__ import annotations

from dataclasses import dataclass, replace

from ..exceptions import ConfigError
from ..facepipe.pipeline import IMAGENET_NORM, UNIT_NORM, NormSpec

REFERENCE_FEATURE_DIMS = {
    "vgg19": 4096,
    "resnet50": 2048,
    "densenet121": 1024,
    "mobilenet_v2_05_224": 1280,
    "lightcnn29": 512,
}


@dataclass(frozen=True)
class BackboneSpec:
    backbone_id: str
    input_size: tuple[int, int]
    feature_dim: int
    param_count_info: int
    weights_ref: str
    norm: NormSpec
    layer: str = ""
    weights_sha256: str | None = None

    def __post_init__(self):
        if self.feature_dim <= 0:
            raise ValueError("feature_dim must be positive")


_SPECS = (
    BackboneSpec("vgg19", (224, 224), 4096, 140_000_000, "vgg19.safetensors", IMAGENET_NORM, "fc7 (post-ReLU)"),
    BackboneSpec("resnet50", (224, 224), 2048, 23_500_000, "resnet50.safetensors", IMAGENET_NORM, "global average pool"),
    BackboneSpec("densenet121", (224, 224), 1024, 7_000_000, "densenet121.safetensors", IMAGENET_NORM, "global average pool"),
    BackboneSpec(
        "mobilenet_v2_05_224", (224, 224), 1280, 688_000, "mobilenet_v2_05_224.safetensors", IMAGENET_NORM,
        "global average pool",
    ),
    BackboneSpec("lightcnn29", (128, 128), 512, 11_000_000, "lightcnn29.safetensors", UNIT_NORM, "MFM embedding"),
    BackboneSpec("stub", (32, 32), 32 * 32 * 3, 0, "", UNIT_NORM, "identity"),
)
_BY_ID = {s.backbone_id: s for s in _SPECS}


def registry() -> list[BackboneSpec]:
    return list(_SPECS)


def get_backbone(backbone_id: str) -> BackboneSpec:
    try:
        return _BY_ID[backbone_id]
    except KeyError:
        raise ConfigError(f"unknown backbone {backbone_id!r}; known: {sorted(_BY_ID)}") from None


def stub_spec(input_size: tuple[int, int] = (32, 32)) -> BackboneSpec:
    """Identity backbone whose features are the flattened preprocessed pixels."""
    h, w = input_size
    return replace(_BY_ID["stub"], input_size=(h, w), feature_dim=h * w * 3)
