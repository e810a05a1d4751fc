"""Full U-shaped network: encoder, interaction skips, CoSE decoder, UpConv lifts, MLF head.

Stages are numbered 1 (stem, H/2) to 5 (bottleneck, H/32)::

    D5 = UpConv5(Dec5(E5))                      8C -> 4C at H/16
    Zi = CSI_i(Ei, D(i+1));  Si = Dec_i(Zi);  Di = UpConv_i(Si)     i = 4, 3, 2
    Z1 = E1 + D2;  S1 = Dec1(Z1)
    logits, (Y1..Y4) = MLF(S1, S2, S3, S4)

Ablation toggles swap CoSE for a plain ConvBlock, CSI for addition, and MLF
for a single 1x1 head on the upsampled stage-1 output.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, fields
from typing import NamedTuple, Sequence

import torch
import torch.nn as nn

from .core import Conv, bilinear_upsample, init_parameters
from .cose import SE_RATIO, CoSE, ConvBlock, UpConv
from .csi import CSI
from .encoder import Encoder, EncoderOutputs, stage_channels
from .errors import ConfigError
from .mlf import MLF

PAPER_BLOCKS = (2, 2, 5, 2)


@dataclass
class ModelConfig:
    image_size: int = 64
    in_channels: int = 1
    base_channels: int = 8
    stage_blocks: tuple[int, int, int, int] = (1, 1, 1, 1)
    num_classes: int = 5
    use_cose: bool = True
    use_csi: bool = True
    use_mlf: bool = True
    se_ratio: int = SE_RATIO
    seed: int = 0

    def __post_init__(self):
        self.stage_blocks = tuple(int(b) for b in self.stage_blocks)
        self.validate()

    def validate(self) -> None:
        if self.image_size < 32 or self.image_size % 32:
            raise ConfigError(f"image_size must be a multiple of 32 and >= 32, got {self.image_size}")
        if self.num_classes < 2:
            raise ConfigError(f"num_classes must be >= 2 (background included), got {self.num_classes}")
        if self.in_channels < 1 or self.base_channels < 1 or self.se_ratio < 1:
            raise ConfigError(f"channel counts and se_ratio must be positive: {self}")
        if len(self.stage_blocks) != 4 or min(self.stage_blocks) < 1:
            raise ConfigError(f"stage_blocks must be 4 positive ints, got {self.stage_blocks}")

    @classmethod
    def paper(cls, **overrides) -> "ModelConfig":
        kw = dict(image_size=256, base_channels=96, stage_blocks=PAPER_BLOCKS, num_classes=9)
        kw.update(overrides)
        return cls(**kw)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["stage_blocks"] = list(self.stage_blocks)
        return d

    def architecture_hash(self) -> str:
        """SHA-256 over every field except ``seed``; identifies checkpoint compatibility."""
        d = self.to_dict()
        d.pop("seed")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


class ForwardOutputs(NamedTuple):
    logits: torch.Tensor
    stage_logits: tuple[torch.Tensor, ...]


class AddSkip(nn.Module):
    def forward(self, x, y):
        if x.shape != y.shape:
            raise ConfigError(f"skip inputs must match: {tuple(x.shape)} vs {tuple(y.shape)}")
        return x + y


class FIFUNet(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        config.validate()
        self.config = config
        ch = stage_channels(config.base_channels)
        self.encoder = Encoder(config.in_channels, config.base_channels, config.stage_blocks)

        def dec(c):
            return CoSE(c, config.se_ratio) if config.use_cose else ConvBlock(c)

        # index i holds the module for stage i + 1
        self.decoder = nn.ModuleList(dec(c) for c in ch)
        self.upconv = nn.ModuleList(UpConv(ch[i], ch[i - 1]) for i in range(1, 5))
        self.skips = nn.ModuleList(
            (CSI(ch[i]) if config.use_csi else AddSkip()) for i in range(1, 4)
        )
        if config.use_mlf:
            self.mlf = MLF(ch[:4], config.num_classes, config.image_size)
        else:
            self.head = Conv(ch[0], config.num_classes, 1)
        if not next(self.parameters()).is_meta:
            init_parameters(self, torch.Generator().manual_seed(config.seed))
            if config.use_mlf:
                self.mlf.fusion.init_average()

    def check_input(self, img: torch.Tensor) -> None:
        c = self.config
        expected = (c.in_channels, c.image_size, c.image_size)
        if img.dim() != 4 or tuple(img.shape[1:]) != expected:
            raise ConfigError(f"input must be (N, {', '.join(map(str, expected))}), got {tuple(img.shape)}")

    def decode(self, e: Sequence[torch.Tensor]) -> list[torch.Tensor]:
        """Run the decoder on encoder features e1..e5; returns S1..S4."""
        s = [None] * 5
        s[4] = self.decoder[4](e[4])
        d = self.upconv[3](s[4])
        for i in (3, 2, 1):
            z = self.skips[i - 1](e[i], d)
            s[i] = self.decoder[i](z)
            d = self.upconv[i - 1](s[i])
        s[0] = self.decoder[0](e[0] + d)
        return s[:4]

    def forward(self, img: torch.Tensor | None = None, features: EncoderOutputs | None = None) -> ForwardOutputs:
        if features is None:
            self.check_input(img)
            features = self.encoder(img)
        xs = self.decode(features)
        if self.config.use_mlf:
            out = self.mlf(xs)
            return ForwardOutputs(out.logits, out.stage_logits)
        logits = self.head(bilinear_upsample(xs[0], 2))
        return ForwardOutputs(logits, (logits,) * 4)


def build_model(config: ModelConfig, dtype: torch.dtype = torch.float32) -> FIFUNet:
    return FIFUNet(config).to(dtype)


def fifunet_forward(img: torch.Tensor, model: FIFUNet) -> ForwardOutputs:
    return model(img)


def _count(module: nn.Module | None) -> int:
    if module is None:
        return 0
    return sum(p.numel() for p in module.parameters())


def param_breakdown(config: ModelConfig) -> dict[str, int]:
    """Scalar parameter counts per top-level component, plus ``total``."""
    model = _meta_model(config)
    parts = {
        "encoder": _count(model.encoder),
        "skips": _count(model.skips),
        "decoder": _count(model.decoder),
        "upconv": _count(model.upconv),
        "head": _count(getattr(model, "mlf", None)) + _count(getattr(model, "head", None)),
    }
    parts["total"] = sum(parts.values())
    return parts


def _meta_model(config: ModelConfig) -> FIFUNet:
    with torch.device("meta"):
        return FIFUNet(config)


def param_count(config: ModelConfig) -> int:
    return param_breakdown(config)["total"]
