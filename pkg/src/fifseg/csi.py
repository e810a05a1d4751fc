"""Channel-spatial interaction on a skip connection.

The channel unit reweights each path's conv features by per-channel gates
computed from the *other* path; the spatial unit then gates the sum of both
paths with a single-channel map shared across channels.
"""
from __future__ import annotations

from typing import NamedTuple

import torch
import torch.nn as nn

from .core import BatchNorm, Conv, ConvBNAct, activation, adaptive_avg_pool_1x1
from .errors import ConfigError


def _check_pair(x: torch.Tensor, y: torch.Tensor) -> None:
    if x.shape != y.shape:
        raise ConfigError(f"interaction inputs must match: {tuple(x.shape)} vs {tuple(y.shape)}")


class CIUParts(NamedTuple):
    x_tilde: torch.Tensor
    y_tilde: torch.Tensor
    x1: torch.Tensor
    y1: torch.Tensor
    w_x: torch.Tensor
    w_y: torch.Tensor


class ChannelGate(nn.Module):
    """sigmoid(AAP(BN(conv1x1(x)))) -> (N, C, 1, 1)."""

    def __init__(self, channels: int):
        super().__init__()
        self.conv = Conv(channels, channels, 1, bias=False)
        self.bn = BatchNorm(channels)

    def forward(self, x):
        return activation(adaptive_avg_pool_1x1(self.bn(self.conv(x))), "sigmoid")


class CIU(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.gate_x = ChannelGate(channels)
        self.gate_y = ChannelGate(channels)
        self.feat_x = ConvBNAct(channels, channels, 3)
        self.feat_y = ConvBNAct(channels, channels, 3)

    def parts(self, x, y) -> CIUParts:
        _check_pair(x, y)
        w_x = self.gate_x(x)
        w_y = self.gate_y(y)
        x1 = self.feat_x(x)
        y1 = self.feat_y(y)
        x_tilde = x1 + w_y * x1
        y_tilde = y1 + w_x * y1
        return CIUParts(x_tilde, y_tilde, x1, y1, w_x, w_y)

    def forward(self, x, y):
        p = self.parts(x, y)
        return p.x_tilde, p.y_tilde


class SIU(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.squeeze_x = nn.Sequential(Conv(channels, 1, 1, bias=False), BatchNorm(1))
        self.squeeze_y = nn.Sequential(Conv(channels, 1, 1, bias=False), BatchNorm(1))
        self.mix = Conv(2, 1, 1)

    def spatial_weight(self, x_tilde, y_tilde) -> torch.Tensor:
        """sigmoid(P), shape (N, 1, H, W)."""
        _check_pair(x_tilde, y_tilde)
        q = torch.cat([self.squeeze_x(x_tilde), self.squeeze_y(y_tilde)], dim=1)
        return activation(self.mix(q), "sigmoid")

    def forward(self, x_tilde, y_tilde):
        s = self.spatial_weight(x_tilde, y_tilde)
        return x_tilde * s + y_tilde * s


class CSI(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.ciu = CIU(channels)
        self.siu = SIU(channels)

    def forward(self, x_enc, y_dec):
        return self.siu(*self.ciu(x_enc, y_dec))


def ciu_forward(x, y, ciu: CIU):
    return ciu(x, y)


def siu_forward(x_tilde, y_tilde, siu: SIU):
    return siu(x_tilde, y_tilde)


def csi_forward(x_enc, y_dec, csi: CSI):
    return csi(x_enc, y_dec)
