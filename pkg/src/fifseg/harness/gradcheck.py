"""Finite-difference gradient checks over every building block and the full model."""
from __future__ import annotations

import json
import time
from dataclasses import dataclass
from typing import Callable

import torch
import torch.nn as nn

from .. import core
from ..core import GradCheckReport, grad_check, init_parameters
from ..cose import CoSE, ConvBlock, SqueezeExcite, UpConv
from ..csi import CIU, CSI, SIU
from ..mlf import MLF, Fusion, StageHeads
from ..model import FIFUNet, ModelConfig

MODULE_TOL = 1e-4
MODEL_TOL = 1e-3
STEP = 1e-5
MODULE_FLOOR = 1e-5
MODEL_FLOOR = 1e-4
CORE_SHAPES = ((1, 2, 4, 4), (2, 3, 5, 5))
MODEL_CONFIG = dict(image_size=32, base_channels=4, num_classes=3, stage_blocks=(1, 1, 1, 1))


@dataclass
class CheckCase:
    name: str
    shape: tuple[int, ...]
    run: Callable[[], GradCheckReport]
    tol: float


def _randn(shape, gen):
    return torch.randn(shape, generator=gen, dtype=torch.float64)


def _perturb(module: nn.Module, gen: torch.Generator, scale: float = 0.2) -> nn.Module:
    """Seeded init plus random offsets on every parameter so no biases or BN affines sit at exactly 0/1."""
    init_parameters(module, gen)
    with torch.no_grad():
        for p in module.parameters():
            p.add_(scale * torch.randn(p.shape, generator=gen, dtype=p.dtype))
    return module


def _module_check(
    name, module_fn, input_shapes, tol=MODULE_TOL, h=STEP, floor=MODULE_FLOOR, max_entries=None, seed=0
):
    def run():
        gen = torch.Generator().manual_seed(seed)
        module = module_fn().double()
        _perturb(module, gen, 1.0 if isinstance(module, _Fn) else 0.2)
        module.train()
        inputs = [_randn(s, gen) for s in input_shapes]
        f = module if not isinstance(module, _Fn) else module.fn

        def call(*xs):
            out = f(*xs)
            if isinstance(out, (tuple, list)):
                return torch.cat([o.reshape(-1) for o in out])
            return out

        return grad_check(
            call, inputs, module.named_parameters(), h=h, tol=tol, floor=floor, max_entries=max_entries, seed=seed
        )

    return CheckCase(name, tuple(input_shapes[0]), run, tol)


class _Fn(nn.Module):
    """Wraps a functional op plus the parameters it closes over (zero-initialised, then perturbed)."""

    def __init__(self, fn_factory):
        super().__init__()
        self.params = nn.ParameterDict()
        self.fn = fn_factory(self.params)


class _Call(nn.Module):
    def __init__(self, module, fn):
        super().__init__()
        self.inner = module
        self.fn = fn

    def forward(self, *xs):
        return self.fn(self.inner, *xs)


def _conv_op(shape, groups=1):
    c = shape[1]

    def factory(params):
        params["weight"] = nn.Parameter(torch.zeros(c, c // groups, 3, 3, dtype=torch.float64))
        params["bias"] = nn.Parameter(torch.zeros(c, dtype=torch.float64))
        if groups == 1:
            return lambda x: core.conv2d(x, params["weight"], params["bias"], padding=1)
        return lambda x: core.group_conv2d(x, params["weight"], params["bias"], groups, padding=1)

    return lambda: _Fn(factory)


def _bn_op(shape):
    c = shape[1]

    def factory(params):
        params["weight"] = nn.Parameter(torch.ones(c, dtype=torch.float64))
        params["bias"] = nn.Parameter(torch.zeros(c, dtype=torch.float64))
        rm, rv = torch.zeros(c, dtype=torch.float64), torch.ones(c, dtype=torch.float64)
        return lambda x: core.batchnorm2d(x, params["weight"], params["bias"], rm, rv, training=True)

    return lambda: _Fn(factory)


def _plain_op(fn):
    return lambda: _Fn(lambda params: fn)


def core_cases() -> list[CheckCase]:
    cases = []
    for shape in CORE_SHAPES:
        cases += [
            _module_check("core.conv2d", _conv_op(shape), [shape]),
            _module_check("core.group_conv2d", _conv_op(shape, groups=shape[1]), [shape]),
            _module_check("core.batchnorm2d", _bn_op(shape), [shape]),
            _module_check("core.relu", _plain_op(lambda x: core.activation(x, "relu")), [shape]),
            _module_check("core.sigmoid", _plain_op(lambda x: core.activation(x, "sigmoid")), [shape]),
            _module_check("core.adaptive_avg_pool_1x1", _plain_op(core.adaptive_avg_pool_1x1), [shape]),
            _module_check("core.bilinear_upsample", _plain_op(lambda x: core.bilinear_upsample(x, 2)), [shape]),
        ]
    return cases


def block_cases() -> list[CheckCase]:
    s = (1, 2, 4, 4)
    s2 = (2, 3, 5, 5)
    mlf_shapes = [(2, 4, 16, 16), (2, 4, 8, 8), (2, 8, 4, 4), (2, 16, 2, 2)]

    def heads():
        return _Call(StageHeads([4, 4, 8, 16], 3, 32), lambda m, *xs: m(xs))

    def mlf():
        return _Call(MLF([4, 4, 8, 16], 3, 32), lambda m, *xs: _flat_outputs(m(xs)))

    return [
        _module_check("csi.CIU", lambda: CIU(2), [s, s]),
        _module_check("csi.CIU", lambda: CIU(3), [s2, s2]),
        _module_check("csi.SIU", lambda: SIU(2), [s, s]),
        _module_check("csi.SIU", lambda: SIU(3), [s2, s2]),
        _module_check("csi.CSI", lambda: CSI(2), [s, s]),
        _module_check("csi.CSI", lambda: CSI(3), [s2, s2]),
        _module_check("cose.ConvBlock", lambda: ConvBlock(2), [s]),
        _module_check("cose.SqueezeExcite", lambda: SqueezeExcite(2), [s]),
        _module_check("cose.SqueezeExcite", lambda: SqueezeExcite(4, 2), [(1, 4, 3, 3)]),
        _module_check("cose.CoSE", lambda: CoSE(2), [s]),
        _module_check("cose.CoSE", lambda: CoSE(3), [s2]),
        _module_check("cose.UpConv", lambda: UpConv(2, 2), [(1, 2, 3, 3)]),
        _module_check("mlf.StageHeads", heads, mlf_shapes),
        _module_check("mlf.Fusion", lambda: Fusion(3), [(2, 12, 8, 8)]),
        _module_check("mlf.MLF", mlf, mlf_shapes, max_entries=64),
    ]


def _flat_outputs(out) -> torch.Tensor:
    return torch.cat([out.logits.reshape(-1)] + [y.reshape(-1) for y in out.stage_logits])


class _ModelLogits(nn.Module):
    def __init__(self):
        super().__init__()
        self.net = FIFUNet(ModelConfig(**MODEL_CONFIG))

    def forward(self, x):
        return _flat_outputs(self.net(x))


def model_cases(max_entries: int = 24) -> list[CheckCase]:
    return [
        _module_check(
            "model.FIFUNet", _ModelLogits, [(2, 1, 32, 32)],
            tol=MODEL_TOL, floor=MODEL_FLOOR, max_entries=max_entries,
        )
    ]


def all_cases() -> list[CheckCase]:
    return core_cases() + block_cases() + model_cases()


@dataclass
class SuiteResult:
    passed: bool
    results: list[tuple[CheckCase, GradCheckReport]]
    runtime_s: float

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "runtime_s": self.runtime_s,
            "checks": [
                {
                    "name": case.name,
                    "shape": list(case.shape),
                    "tol": case.tol,
                    "passed": rep.passed,
                    "max_rel_err": rep.max_rel_err,
                    "error": rep.error,
                    "worst": None if rep.worst is None else {
                        "tensor": rep.worst.name,
                        "index": list(rep.worst.index),
                        "analytic": rep.worst.analytic,
                        "numeric": rep.worst.numeric,
                    },
                }
                for case, rep in self.results
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def gradcheck_suite(cases: list[CheckCase] | None = None) -> SuiteResult:
    start = time.perf_counter()
    results = [(case, case.run()) for case in (cases if cases is not None else all_cases())]
    return SuiteResult(all(r.passed for _, r in results), results, time.perf_counter() - start)
