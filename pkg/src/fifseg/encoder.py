"""Five-stage encoder: a convolutional stem plus four downsampling stages.

The stage modules here are lightweight residual-conv stand-ins that reproduce
the channel/resolution signature of a hierarchical backbone. Any callable with
the same signature can replace them, and :func:`load_stage_activations` lets
precomputed activations be injected from ``.npy`` files instead.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np
import torch
import torch.nn as nn

from .core import ConvBNAct
from .errors import ConfigError, DataError

NUM_STAGES = 5


@dataclass(frozen=True)
class EncoderStageSpec:
    out_channels: int
    num_blocks: int
    downsample: bool = True

    def __post_init__(self):
        if self.out_channels < 1 or self.num_blocks < 1:
            raise ConfigError(f"invalid stage spec {self}")


class EncoderOutputs(NamedTuple):
    e1: torch.Tensor
    e2: torch.Tensor
    e3: torch.Tensor
    e4: torch.Tensor
    e5: torch.Tensor


def stage_channels(base_channels: int) -> tuple[int, ...]:
    """Channel counts of e1..e5: ``(C, C, 2C, 4C, 8C)``."""
    c = base_channels
    return (c, c, 2 * c, 4 * c, 8 * c)


def stage_specs(base_channels: int, blocks: Sequence[int]) -> list[EncoderStageSpec]:
    if len(blocks) != 4:
        raise ConfigError(f"need 4 stage block counts, got {list(blocks)}")
    return [EncoderStageSpec(ch, b) for ch, b in zip(stage_channels(base_channels)[1:], blocks)]


def expected_shapes(batch: int, base_channels: int, image_size: int) -> list[tuple[int, int, int, int]]:
    return [
        (batch, ch, image_size >> (i + 1), image_size >> (i + 1))
        for i, ch in enumerate(stage_channels(base_channels))
    ]


def check_input_size(img: torch.Tensor) -> None:
    if img.dim() != 4:
        raise ConfigError(f"image batch must be (N, C, H, W), got {tuple(img.shape)}")
    h, w = img.shape[-2:]
    if h % 32 or w % 32:
        raise ConfigError(f"spatial size {h}x{w} must be divisible by 32")


class Stem(nn.Module):
    """conv3x3 stride 2 + BN + ReLU, then conv3x3 + BN + ReLU."""

    def __init__(self, in_channels: int, out_channels: int):
        super().__init__()
        self.conv1 = ConvBNAct(in_channels, out_channels, 3, stride=2)
        self.conv2 = ConvBNAct(out_channels, out_channels, 3)

    def forward(self, img):
        check_input_size(img)
        return self.conv2(self.conv1(img))


class ResidualBlock(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.branch = ConvBNAct(channels, channels, 3)

    def forward(self, x):
        return x + self.branch(x)


class ConvStage(nn.Module):
    """Stride-2 projection to ``out_channels`` followed by residual conv blocks."""

    def __init__(self, in_channels: int, spec: EncoderStageSpec):
        super().__init__()
        stride = 2 if spec.downsample else 1
        self.down = ConvBNAct(in_channels, spec.out_channels, 3, stride=stride)
        self.blocks = nn.Sequential(*(ResidualBlock(spec.out_channels) for _ in range(spec.num_blocks)))

    def forward(self, x):
        return self.blocks(self.down(x))


class Encoder(nn.Module):
    def __init__(self, in_channels: int, base_channels: int, blocks: Sequence[int] = (2, 2, 5, 2)):
        super().__init__()
        self.in_channels = in_channels
        self.base_channels = base_channels
        self.specs = stage_specs(base_channels, blocks)
        self.stem = Stem(in_channels, base_channels)
        chans = [base_channels] + [s.out_channels for s in self.specs]
        self.stages = nn.ModuleList(ConvStage(chans[i], s) for i, s in enumerate(self.specs))

    def forward(self, img) -> EncoderOutputs:
        if img.shape[1] != self.in_channels:
            raise ConfigError(f"expected {self.in_channels} input channels, got image {tuple(img.shape)}")
        feats = [self.stem(img)]
        for stage in self.stages:
            feats.append(stage(feats[-1]))
        return EncoderOutputs(*feats)


def stem_forward(img: torch.Tensor, stem: Stem) -> torch.Tensor:
    return stem(img)


def encoder_forward(img: torch.Tensor, encoder: Encoder) -> EncoderOutputs:
    return encoder(img)


def encoder_param_count(in_channels: int, base_channels: int, blocks: Sequence[int]) -> int:
    """Closed-form scalar parameter count of :class:`Encoder` (3x3 bias-free convs, BN gamma+beta)."""
    c = base_channels
    total = 9 * in_channels * c + 2 * c + 9 * c * c + 2 * c
    chans = stage_channels(c)
    for i, b in enumerate(blocks):
        cin, cout = chans[i], chans[i + 1]
        total += 9 * cin * cout + 2 * cout
        total += b * (9 * cout * cout + 2 * cout)
    return total


def save_stage_activations(outputs: Sequence[torch.Tensor], directory: str | Path) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for i, t in enumerate(outputs, start=1):
        np.save(directory / f"stage_{i}.npy", t.detach().cpu().numpy().astype(np.float32))


def load_stage_activations(
    directory: str | Path,
    expected: Sequence[tuple[int, ...]] | None = None,
) -> EncoderOutputs:
    """Read ``stage_1.npy`` .. ``stage_5.npy`` produced by an external backbone."""
    directory = Path(directory)
    feats = []
    for i in range(1, NUM_STAGES + 1):
        path = directory / f"stage_{i}.npy"
        if not path.exists():
            raise DataError(f"missing stage activation file {path}")
        arr = np.load(path, allow_pickle=False)
        if expected is not None and tuple(arr.shape) != tuple(expected[i - 1]):
            raise DataError(f"{path}: shape {arr.shape}, expected {tuple(expected[i - 1])}")
        if not np.isfinite(arr).all():
            raise DataError(f"{path}: non-finite activations")
        feats.append(torch.from_numpy(np.ascontiguousarray(arr, dtype=np.float32)))
    for i in range(1, NUM_STAGES):
        if feats[i].shape[-1] * 2 != feats[i - 1].shape[-1]:
            raise DataError(
                f"stage {i + 1} resolution {tuple(feats[i].shape)} is not half of stage {i} {tuple(feats[i - 1].shape)}"
            )
    return EncoderOutputs(*feats)
