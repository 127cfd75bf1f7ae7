"""LightCNN-29: residual stack of convolutions with MFM activations."""
from __future__ import annotations

import torch
from torch import nn

from .mfm import MaxFeatureMap


class MFMConv(nn.Module):
    def __init__(self, c_in: int, c_out: int, kernel: int, padding: int):
        super().__init__()
        self.conv = nn.Conv2d(c_in, 2 * c_out, kernel, padding=padding)
        self.mfm = MaxFeatureMap(1)

    def forward(self, x):
        return self.mfm(self.conv(x))


class MFMLinear(nn.Module):
    def __init__(self, d_in: int, d_out: int):
        super().__init__()
        self.fc = nn.Linear(d_in, 2 * d_out)
        self.mfm = MaxFeatureMap(1)

    def forward(self, x):
        return self.mfm(self.fc(x))


class ResBlock(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.conv1 = MFMConv(channels, channels, 3, 1)
        self.conv2 = MFMConv(channels, channels, 3, 1)

    def forward(self, x):
        return x + self.conv2(self.conv1(x))


class Group(nn.Module):
    """1x1 MFM conv followed by a 3x3 MFM conv that changes the width."""

    def __init__(self, c_in: int, c_out: int):
        super().__init__()
        self.conv_a = MFMConv(c_in, c_in, 1, 0)
        self.conv = MFMConv(c_in, c_out, 3, 1)

    def forward(self, x):
        return self.conv(self.conv_a(x))


def _pool():
    return nn.MaxPool2d(2, 2, ceil_mode=True)


class LightCNN29(nn.Module):
    """29-layer LightCNN for 128x128 inputs; ``forward`` returns the embedding."""

    def __init__(self, in_channels: int = 3, embedding_dim: int = 512, blocks=(1, 2, 3, 4)):
        super().__init__()
        self.conv1 = MFMConv(in_channels, 48, 5, 2)
        self.body = nn.Sequential(
            _pool(),
            *[ResBlock(48) for _ in range(blocks[0])],
            Group(48, 96),
            _pool(),
            *[ResBlock(96) for _ in range(blocks[1])],
            Group(96, 192),
            _pool(),
            *[ResBlock(192) for _ in range(blocks[2])],
            Group(192, 128),
            *[ResBlock(128) for _ in range(blocks[3])],
            Group(128, 128),
            _pool(),
        )
        self.fc = MFMLinear(8 * 8 * 128, embedding_dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = self.body(self.conv1(x))
        return self.fc(torch.flatten(x, 1))
