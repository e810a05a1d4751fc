"""Tensor primitives shared by every block, plus a finite-difference gradient checker.

Everything operates on NCHW ``torch.Tensor`` feature maps. The functional ops
validate their arguments and raise :class:`~fifseg.errors.ConfigError` with
both offending shapes; the ``nn.Module`` wrappers below hold the learnable
state and route their forward pass through the functional ops.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigError, DegenerateBatchError

BN_EPS = 1e-5
BN_MOMENTUM = 0.1
UPSAMPLE_FACTORS = (2, 4, 8, 16)


def _check_feature_map(x: torch.Tensor, name: str = "x") -> None:
    if x.dim() != 4:
        raise ConfigError(f"{name} must be rank-4 (N, C, H, W), got shape {tuple(x.shape)}")
    if min(x.shape) < 1:
        raise ConfigError(f"{name} has an empty dimension: {tuple(x.shape)}")


def conv2d(
    x: torch.Tensor,
    weight: torch.Tensor,
    bias: torch.Tensor | None = None,
    stride: int = 1,
    padding: int = 0,
    groups: int = 1,
) -> torch.Tensor:
    _check_feature_map(x)
    if weight.dim() != 4:
        raise ConfigError(f"conv weight must be (C_out, C_in/groups, k, k), got {tuple(weight.shape)}")
    c_out, c_in_g, kh, kw = weight.shape
    if groups < 1 or x.shape[1] % groups or c_out % groups:
        raise ConfigError(
            f"groups={groups} must divide C_in and C_out; input {tuple(x.shape)}, weight {tuple(weight.shape)}"
        )
    if c_in_g * groups != x.shape[1]:
        raise ConfigError(
            f"channel mismatch: input {tuple(x.shape)} vs weight {tuple(weight.shape)} (groups={groups})"
        )
    if bias is not None and bias.shape != (c_out,):
        raise ConfigError(f"bias shape {tuple(bias.shape)} does not match weight {tuple(weight.shape)}")
    if stride < 1 or padding < 0:
        raise ConfigError(f"invalid stride={stride} / padding={padding}")
    if x.shape[2] + 2 * padding < kh or x.shape[3] + 2 * padding < kw:
        raise ConfigError(
            f"input {tuple(x.shape)} smaller than kernel {tuple(weight.shape)} after padding {padding}"
        )
    return F.conv2d(x, weight, bias, stride=stride, padding=padding, groups=groups)


def group_conv2d(
    x: torch.Tensor,
    weight: torch.Tensor,
    bias: torch.Tensor | None,
    groups: int,
    padding: int = 0,
) -> torch.Tensor:
    """Grouped convolution: output block ``j`` sees only input block ``j``."""
    return conv2d(x, weight, bias, padding=padding, groups=groups)


def batchnorm2d(
    x: torch.Tensor,
    weight: torch.Tensor,
    bias: torch.Tensor,
    running_mean: torch.Tensor,
    running_var: torch.Tensor,
    training: bool,
    momentum: float = BN_MOMENTUM,
    eps: float = BN_EPS,
) -> torch.Tensor:
    """Per-channel batch normalization.

    Training mode normalizes with the batch statistics over (N, H, W) and
    updates ``running_mean``/``running_var`` in place; eval mode uses the
    running statistics.
    """
    _check_feature_map(x)
    if weight.shape != (x.shape[1],):
        raise ConfigError(f"BN has {weight.shape[0]} channels, input is {tuple(x.shape)}")
    if training and x.shape[0] * x.shape[2] * x.shape[3] == 1:
        raise DegenerateBatchError(
            f"batch statistics undefined for a single value per channel, input {tuple(x.shape)}"
        )
    return F.batch_norm(
        x, running_mean, running_var, weight, bias, training=training, momentum=momentum, eps=eps
    )


def activation(x: torch.Tensor, kind: str) -> torch.Tensor:
    if kind == "relu":
        return torch.relu(x)
    if kind == "sigmoid":
        return torch.sigmoid(x)
    raise ConfigError(f"unknown activation {kind!r}")


def adaptive_avg_pool_1x1(x: torch.Tensor) -> torch.Tensor:
    _check_feature_map(x)
    return x.mean(dim=(2, 3), keepdim=True)


def bilinear_upsample(x: torch.Tensor, factor: int) -> torch.Tensor:
    """Bilinear upsampling, ``align_corners=False`` (half-pixel centres)."""
    _check_feature_map(x)
    if factor not in UPSAMPLE_FACTORS:
        raise ConfigError(f"upsample factor must be one of {UPSAMPLE_FACTORS}, got {factor}")
    return F.interpolate(x, scale_factor=factor, mode="bilinear", align_corners=False)


class Conv(nn.Module):
    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel_size: int,
        stride: int = 1,
        padding: int | None = None,
        groups: int = 1,
        bias: bool = True,
    ):
        super().__init__()
        if in_channels % groups or out_channels % groups:
            raise ConfigError(
                f"groups={groups} must divide C_in={in_channels} and C_out={out_channels}"
            )
        self.stride = stride
        self.padding = kernel_size // 2 if padding is None else padding
        self.groups = groups
        self.weight = nn.Parameter(torch.zeros(out_channels, in_channels // groups, kernel_size, kernel_size))
        self.bias = nn.Parameter(torch.zeros(out_channels)) if bias else None

    def forward(self, x):
        return conv2d(x, self.weight, self.bias, self.stride, self.padding, self.groups)

    def extra_repr(self):
        c_out, c_in_g, k, _ = self.weight.shape
        return (
            f"{c_in_g * self.groups}, {c_out}, k={k}, stride={self.stride}, "
            f"padding={self.padding}, groups={self.groups}, bias={self.bias is not None}"
        )


class BatchNorm(nn.Module):
    def __init__(self, channels: int, momentum: float = BN_MOMENTUM, eps: float = BN_EPS):
        super().__init__()
        self.momentum = momentum
        self.eps = eps
        self.weight = nn.Parameter(torch.ones(channels))
        self.bias = nn.Parameter(torch.zeros(channels))
        self.register_buffer("running_mean", torch.zeros(channels))
        self.register_buffer("running_var", torch.ones(channels))

    def forward(self, x):
        return batchnorm2d(
            x, self.weight, self.bias, self.running_mean, self.running_var,
            self.training, self.momentum, self.eps,
        )


class ConvBNAct(nn.Module):
    """conv -> BN -> optional ReLU. The conv is bias-free since BN absorbs any bias."""

    def __init__(self, in_channels, out_channels, kernel_size=3, stride=1, groups=1, act=True):
        super().__init__()
        self.conv = Conv(in_channels, out_channels, kernel_size, stride=stride, groups=groups, bias=False)
        self.bn = BatchNorm(out_channels)
        self.act = act

    def forward(self, x):
        x = self.bn(self.conv(x))
        return activation(x, "relu") if self.act else x


def init_parameters(module: nn.Module, generator: torch.Generator) -> nn.Module:
    """Fan-in scaled normal init for conv weights, zero biases, BN gamma=1 / beta=0.

    Parameters are visited in ``named_modules`` order so a given seed always
    produces the same weights.
    """
    with torch.no_grad():
        for _, m in module.named_modules():
            if isinstance(m, Conv):
                fan_in = m.weight.shape[1] * m.weight.shape[2] * m.weight.shape[3]
                std = math.sqrt(2.0 / fan_in)
                m.weight.copy_(torch.randn(m.weight.shape, generator=generator, dtype=torch.float64) * std)
                if m.bias is not None:
                    m.bias.zero_()
            elif isinstance(m, BatchNorm):
                m.weight.fill_(1.0)
                m.bias.zero_()
                m.running_mean.zero_()
                m.running_var.fill_(1.0)
    return module


# ---------------------------------------------------------------------------
# gradient checking


@dataclass
class TensorCheck:
    name: str
    max_rel_err: float
    index: tuple[int, ...]
    analytic: float
    numeric: float
    checked: int


@dataclass
class GradCheckReport:
    passed: bool
    max_rel_err: float
    tol: float
    tensors: list[TensorCheck] = field(default_factory=list)
    error: str | None = None

    @property
    def worst(self) -> TensorCheck | None:
        if not self.tensors:
            return None
        return max(self.tensors, key=lambda t: t.max_rel_err)

    def describe(self) -> str:
        if self.error:
            return f"FAIL: {self.error}"
        w = self.worst
        status = "ok" if self.passed else "FAIL"
        if w is None:
            return f"{status}: nothing checked"
        return (
            f"{status}: max rel err {self.max_rel_err:.3e} (tol {self.tol:g}) at {w.name}{list(w.index)}: "
            f"analytic {w.analytic:.10g} vs numeric {w.numeric:.10g}"
        )

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "max_rel_err": self.max_rel_err,
            "tol": self.tol,
            "error": self.error,
            "tensors": [vars(t) | {"index": list(t.index)} for t in self.tensors],
        }


def relative_error(analytic: torch.Tensor, numeric: torch.Tensor, floor: float) -> torch.Tensor:
    """``|a - n| / max(|a|, |n|, floor)``; ``floor`` keeps near-zero entries absolute."""
    denom = torch.maximum(torch.maximum(analytic.abs(), numeric.abs()), torch.full_like(analytic, floor))
    return (analytic - numeric).abs() / denom


def _central_difference(scalar, flat, i, h):
    orig = flat[i].item()
    flat[i] = orig + h
    fp = scalar().item()
    flat[i] = orig - h
    fm = scalar().item()
    flat[i] = orig
    if not (math.isfinite(fp) and math.isfinite(fm)):
        return None
    return (fp - fm) / (2 * h)


def grad_check(
    f: Callable[..., torch.Tensor],
    inputs: Sequence[torch.Tensor],
    params: Iterable[tuple[str, torch.Tensor]] = (),
    h: float = 1e-3,
    tol: float = 1e-4,
    floor: float = 1e-6,
    max_entries: int | None = None,
    seed: int = 0,
    refine: int = 2,
) -> GradCheckReport:
    """Compare autograd gradients with central differences ``(f(x+h) - f(x-h)) / 2h``.

    ``f(*inputs)`` may return any tensor; it is reduced to a scalar by a fixed
    random projection so every output entry contributes. All inputs and
    parameters should be float64. With ``max_entries`` set, each tensor is
    checked on that many randomly chosen entries instead of all of them.

    An entry whose error exceeds ``tol`` is re-differenced with steps
    ``h/10, h/100, ...`` (``refine`` times) and keeps its best result, so a
    ReLU kink straddled by the first step does not count as a failure.
    ``floor`` bounds the denominator of the relative error from below.
    """
    gen = torch.Generator().manual_seed(seed)
    inputs = [x.detach().clone().requires_grad_(True) for x in inputs]
    named = [("input%d" % i, x) for i, x in enumerate(inputs)] + list(params)

    with torch.no_grad():
        probe = f(*inputs)
    if not torch.isfinite(probe).all():
        bad = tuple(torch.nonzero(~torch.isfinite(probe))[0].tolist())
        return GradCheckReport(False, math.inf, tol, error=f"non-finite output at index {list(bad)}")
    weights = torch.randn(probe.shape, generator=gen, dtype=probe.dtype)

    def scalar() -> torch.Tensor:
        return (f(*inputs) * weights).sum()

    for _, t in named:
        if t.grad is not None:
            t.grad = None
    out = scalar()
    tensors = [t for _, t in named]
    grads = torch.autograd.grad(out, tensors, allow_unused=True)

    checks = []
    for (name, t), g in zip(named, grads):
        g = torch.zeros_like(t) if g is None else g.detach()
        if not torch.isfinite(g).all():
            bad = tuple(torch.nonzero(~torch.isfinite(g))[0].tolist())
            return GradCheckReport(False, math.inf, tol, checks, f"non-finite analytic gradient in {name} at {list(bad)}")
        n = t.numel()
        if max_entries is not None and n > max_entries:
            flat_idx = torch.randperm(n, generator=gen)[:max_entries].sort().values.tolist()
        else:
            flat_idx = range(n)
        analytic, numeric = [], []
        flat = t.data.view(-1)
        with torch.no_grad():
            for i in flat_idx:
                a_i = g.view(-1)[i].item()
                step = h
                best = None
                for _ in range(refine + 1):
                    n_i = _central_difference(scalar, flat, i, step)
                    if n_i is None:
                        idx = tuple(int(v) for v in torch.unravel_index(torch.tensor(i), t.shape))
                        return GradCheckReport(
                            False, math.inf, tol, checks, f"non-finite value while perturbing {name}{list(idx)}"
                        )
                    e_i = abs(a_i - n_i) / max(abs(a_i), abs(n_i), floor)
                    if best is None or e_i < best[0]:
                        best = (e_i, n_i)
                    if e_i <= tol:
                        break
                    step /= 10
                numeric.append(best[1])
                analytic.append(a_i)
        if not analytic:
            continue
        a = torch.tensor(analytic, dtype=torch.float64)
        num = torch.tensor(numeric, dtype=torch.float64)
        err = relative_error(a, num, floor)
        k = int(err.argmax())
        flat_pos = list(flat_idx)[k]
        idx = tuple(int(v) for v in torch.unravel_index(torch.tensor(flat_pos), t.shape))
        checks.append(TensorCheck(name, float(err[k]), idx, float(a[k]), float(num[k]), len(analytic)))

    worst = max((c.max_rel_err for c in checks), default=0.0)
    return GradCheckReport(worst <= tol, worst, tol, checks)
