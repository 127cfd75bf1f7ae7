"""Torch feature extractors truncated at the layer each registry entry names."""
from __future__ import annotations

import hashlib
from pathlib import Path

import torch
from torch import nn

from ..exceptions import WeightsError
from .lightcnn import LightCNN29
from .registry import BackboneSpec


class _Flatten(nn.Module):
    def forward(self, x):
        return torch.flatten(x, 1)


class _VGGFc7(nn.Module):
    def __init__(self, net):
        super().__init__()
        self.features, self.avgpool = net.features, net.avgpool
        self.classifier = nn.Sequential(*list(net.classifier.children())[:5])

    def forward(self, x):
        return self.classifier(torch.flatten(self.avgpool(self.features(x)), 1))


def build_network(spec: BackboneSpec) -> nn.Module:
    """Construct the (untrained) truncated network for ``spec``."""
    from torchvision import models

    bid = spec.backbone_id
    if bid == "stub":
        return _Flatten()
    if bid == "vgg19":
        return _VGGFc7(models.vgg19(weights=None))
    if bid == "resnet50":
        net = models.resnet50(weights=None)
        net.fc = nn.Identity()
        return net
    if bid == "densenet121":
        net = models.densenet121(weights=None)
        net.classifier = nn.Identity()
        return net
    if bid == "mobilenet_v2_05_224":
        net = models.mobilenet_v2(weights=None, width_mult=0.5)
        net.classifier = nn.Identity()
        return net
    if bid == "lightcnn29":
        return LightCNN29(in_channels=3, embedding_dim=spec.feature_dim)
    raise WeightsError(f"no network builder for backbone {bid!r}")


def file_sha256(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def weights_path(spec: BackboneSpec, weights_dir: str | Path) -> Path:
    return Path(weights_dir) / (spec.weights_ref or f"{spec.backbone_id}.safetensors")


def load_network(
    spec: BackboneSpec,
    weights_dir: str | Path | None = None,
    *,
    random_init: bool = False,
    seed: int = 0,
    sha256: str | None = None,
) -> nn.Module:
    """Build the network for ``spec`` and load its weights in eval mode.

    Weights are read from ``<weights_dir>/<weights_ref>`` (safetensors). With
    ``random_init`` the network keeps a seeded random initialization instead,
    which is only meaningful for shape and plumbing tests.
    """
    torch.manual_seed(seed)
    net = build_network(spec)
    if spec.backbone_id != "stub" and not random_init:
        if weights_dir is None:
            raise WeightsError(f"backbone {spec.backbone_id!r} needs a weights_dir")
        path = weights_path(spec, weights_dir)
        if not path.is_file():
            raise WeightsError(f"weights file missing for {spec.backbone_id!r}: {path}")
        expected = sha256 or spec.weights_sha256
        if expected is not None and file_sha256(path) != expected:
            raise WeightsError(f"weights file {path} does not match pinned sha256 {expected}")
        from safetensors.torch import load_file

        state = load_file(str(path))
        missing, unexpected = net.load_state_dict(state, strict=False)
        if missing:
            raise WeightsError(f"weights file {path} lacks tensors: {missing[:5]}")
    net.eval()
    return net


def save_network_weights(net: nn.Module, path: str | Path) -> str:
    """Write a state dict as safetensors and return the file's sha256."""
    from safetensors.torch import save_file

    state = {k: v.detach().contiguous() for k, v in net.state_dict().items()}
    save_file(state, str(path))
    return file_sha256(path)


def export_torchvision_weights(spec: BackboneSpec, weights_dir: str | Path) -> tuple[Path, str]:
    """Fetch torchvision's ImageNet weights for ``spec`` and store them as safetensors.

    Needs network access to torchvision's weight hub; not used by the tests.
    """
    from torchvision import models

    ctor = {
        "vgg19": lambda: models.vgg19(weights="IMAGENET1K_V1"),
        "resnet50": lambda: models.resnet50(weights="IMAGENET1K_V2"),
        "densenet121": lambda: models.densenet121(weights="IMAGENET1K_V1"),
    }.get(spec.backbone_id)
    if ctor is None:
        raise WeightsError(f"torchvision has no pretrained weights for {spec.backbone_id!r}")
    full = ctor()
    net = build_network(spec)
    net.load_state_dict(full.state_dict(), strict=False)
    Path(weights_dir).mkdir(parents=True, exist_ok=True)
    path = weights_path(spec, weights_dir)
    return path, save_network_weights(net, path)
