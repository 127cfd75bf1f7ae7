"""Max-Feature-Map: split channels into two halves, keep the elementwise max."""
from __future__ import annotations

import numpy as np
import torch
from torch import nn

from ..exceptions import ShapeError


def mfm(t: np.ndarray, axis: int = -1) -> np.ndarray:
    """Halve the channel axis of ``t`` by taking ``max(first_half, second_half)``."""
    t = np.asarray(t)
    c = t.shape[axis]
    if c % 2:
        raise ShapeError(f"MFM needs an even channel count, got {c}")
    a, b = np.split(t, 2, axis=axis)
    return np.maximum(a, b)


class MaxFeatureMap(nn.Module):
    """Torch MFM over ``dim`` (channels for NCHW and NC inputs)."""

    def __init__(self, dim: int = 1):
        super().__init__()
        self.dim = dim

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[self.dim] % 2:
            raise ShapeError(f"MFM needs an even channel count, got {x.shape[self.dim]}")
        a, b = torch.chunk(x, 2, dim=self.dim)
        return torch.maximum(a, b)
