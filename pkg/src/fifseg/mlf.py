"""Multi-level fusion head.

Each decoder stage is upsampled to image resolution and projected to class
logits. The four logit maps are interleaved class-major so a grouped conv with
``groups=num_classes`` mixes stages within one class only; a standard conv then
mixes classes.
"""
from __future__ import annotations

from typing import NamedTuple, Sequence

import torch
import torch.nn as nn

from .core import BatchNorm, Conv, activation, bilinear_upsample
from .errors import ConfigError

STAGE_FACTORS = (2, 4, 8, 16)


class MLFOutputs(NamedTuple):
    logits: torch.Tensor
    stage_logits: tuple[torch.Tensor, ...]


def channel_cat(y1, y2, y3, y4) -> torch.Tensor:
    """Interleave four (N, K, H, W) maps into (N, 4K, H, W); (stage s, class c) -> 4c + s - 1."""
    ys = (y1, y2, y3, y4)
    for y in ys[1:]:
        if y.shape != y1.shape:
            raise ConfigError(f"channel_cat inputs differ: {tuple(y1.shape)} vs {tuple(y.shape)}")
    n, k, h, w = y1.shape
    return torch.stack(ys, dim=2).reshape(n, 4 * k, h, w)


def channel_uncat(yc: torch.Tensor) -> tuple[torch.Tensor, ...]:
    n, c4, h, w = yc.shape
    if c4 % 4:
        raise ConfigError(f"channel count {c4} is not a multiple of 4")
    split = yc.reshape(n, c4 // 4, 4, h, w)
    return tuple(split[:, :, s] for s in range(4))


class StageHeads(nn.Module):
    def __init__(self, stage_channels: Sequence[int], num_classes: int, image_size: int):
        super().__init__()
        if len(stage_channels) != 4:
            raise ConfigError(f"need 4 stage channel counts, got {list(stage_channels)}")
        self.image_size = image_size
        self.heads = nn.ModuleList(Conv(c, num_classes, 1) for c in stage_channels)

    def forward_stage(self, x: torch.Tensor, i: int) -> torch.Tensor:
        """Head for stage ``i`` in 1..4: upsample by 2**i, then 1x1 conv to class logits."""
        if i not in (1, 2, 3, 4):
            raise ConfigError(f"stage index must be 1..4, got {i}")
        factor = STAGE_FACTORS[i - 1]
        if x.shape[-2] * factor != self.image_size or x.shape[-1] * factor != self.image_size:
            raise ConfigError(
                f"stage {i} input {tuple(x.shape)} is not at image_size/{factor} (image_size={self.image_size})"
            )
        return self.heads[i - 1](bilinear_upsample(x, factor))

    def forward(self, xs: Sequence[torch.Tensor]) -> tuple[torch.Tensor, ...]:
        return tuple(self.forward_stage(x, i) for i, x in enumerate(xs, start=1))


class Fusion(nn.Module):
    def __init__(self, num_classes: int):
        super().__init__()
        self.num_classes = num_classes
        self.intra = Conv(4 * num_classes, num_classes, 3, groups=num_classes, bias=False)
        self.bn = BatchNorm(num_classes)
        self.inter = Conv(num_classes, num_classes, 3)

    def init_average(self) -> None:
        """Start as a per-class mean of the four stage logits passed straight through.

        The grouped conv gets 1/4 on each centre tap and the inter-class conv
        a per-class identity centre tap, so training begins from the deep
        supervision average instead of a random mix.
        """
        with torch.no_grad():
            self.intra.weight.zero_()
            self.intra.weight[:, :, 1, 1] = 0.25
            self.inter.weight.zero_()
            for c in range(self.num_classes):
                self.inter.weight[c, c, 1, 1] = 1.0
            self.inter.bias.zero_()

    def intra_class(self, yc: torch.Tensor) -> torch.Tensor:
        """G = ReLU(BN(grouped conv3x3(yc)))."""
        if yc.shape[1] != 4 * self.num_classes:
            raise ConfigError(f"fusion expects {4 * self.num_classes} channels, got {tuple(yc.shape)}")
        return activation(self.bn(self.intra(yc)), "relu")

    def forward(self, yc):
        return self.inter(self.intra_class(yc))


class MLF(nn.Module):
    def __init__(self, stage_channels: Sequence[int], num_classes: int, image_size: int):
        super().__init__()
        self.heads = StageHeads(stage_channels, num_classes, image_size)
        self.fusion = Fusion(num_classes)

    def forward(self, xs: Sequence[torch.Tensor]) -> MLFOutputs:
        ys = self.heads(xs)
        return MLFOutputs(self.fusion(channel_cat(*ys)), ys)


def stage_head(x, i: int, heads: StageHeads):
    return heads.forward_stage(x, i)


def mlf_fuse(yc, fusion: Fusion):
    return fusion(yc)
