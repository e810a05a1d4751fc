"""Decoder blocks: ConvBlock, squeeze-excitation, CoSE and UpConv."""
from __future__ import annotations

import torch
import torch.nn as nn

from .core import Conv, ConvBNAct, activation, adaptive_avg_pool_1x1, bilinear_upsample
from .errors import ConfigError

SE_RATIO = 16
SE_MIN_WIDTH = 4


def se_width(channels: int, ratio: int = SE_RATIO) -> int:
    return max(channels // ratio, SE_MIN_WIDTH)


class ConvBlock(nn.Module):
    """Two conv3x3-BN-ReLU groups, channel preserving."""

    def __init__(self, channels: int):
        super().__init__()
        self.channels = channels
        self.conv1 = ConvBNAct(channels, channels, 3)
        self.conv2 = ConvBNAct(channels, channels, 3)

    def forward(self, z):
        if z.shape[1] != self.channels:
            raise ConfigError(f"ConvBlock expects {self.channels} channels, got {tuple(z.shape)}")
        return self.conv2(self.conv1(z))


class SqueezeExcite(nn.Module):
    def __init__(self, channels: int, ratio: int = SE_RATIO):
        super().__init__()
        hidden = se_width(channels, ratio)
        self.reduce = Conv(channels, hidden, 1)
        self.expand = Conv(hidden, channels, 1)

    def gate(self, z) -> torch.Tensor:
        """Per-(sample, channel) gate in (0, 1), shape (N, C, 1, 1)."""
        s = activation(self.reduce(adaptive_avg_pool_1x1(z)), "relu")
        return activation(self.expand(s), "sigmoid")

    def forward(self, z):
        return z * self.gate(z)


class CoSE(nn.Module):
    """ConvBlock with an outer residual, then SE with its own residual."""

    def __init__(self, channels: int, se_ratio: int = SE_RATIO):
        super().__init__()
        self.block = ConvBlock(channels)
        self.se = SqueezeExcite(channels, se_ratio)

    def forward(self, z):
        z3 = self.block(z) + z
        return self.se(z3) + z3


class UpConv(nn.Module):
    """Bilinear x2 followed by conv3x3 + BN + ReLU."""

    def __init__(self, in_channels: int, out_channels: int):
        super().__init__()
        self.conv = ConvBNAct(in_channels, out_channels, 3)

    def forward(self, z):
        return self.conv(bilinear_upsample(z, 2))


def conv_block_forward(z, block: ConvBlock):
    return block(z)


def se_forward(z, se: SqueezeExcite):
    return se(z)


def cose_forward(z, cose: CoSE):
    return cose(z)


def upconv_forward(z, up: UpConv):
    return up(z)
