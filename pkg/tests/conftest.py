import numpy as np
import pytest
import torch

from fifseg.core import BatchNorm, Conv, init_parameters

torch.set_num_threads(1)


def seeded(seed=0):
    return torch.Generator().manual_seed(seed)


def randn(*shape, gen=None, scale=1.0):
    gen = gen or seeded()
    return scale * torch.randn(*shape, generator=gen, dtype=torch.float64)


def f64(module, seed=0, perturb=0.0):
    """Module in float64 with seeded init; ``perturb`` adds noise to every parameter."""
    module = module.double()
    gen = seeded(seed)
    init_parameters(module, gen)
    if perturb:
        with torch.no_grad():
            for p in module.parameters():
                p.add_(perturb * torch.randn(p.shape, generator=gen, dtype=p.dtype))
    return module


def zero_convs(module):
    """Zero every conv weight and bias; reset BN to gamma 1 / beta 0 with fresh running stats."""
    with torch.no_grad():
        for m in module.modules():
            if isinstance(m, Conv):
                m.weight.zero_()
                if m.bias is not None:
                    m.bias.zero_()
            elif isinstance(m, BatchNorm):
                m.weight.fill_(1.0)
                m.bias.zero_()
                m.running_mean.zero_()
                m.running_var.fill_(1.0)
    return module


def rel_err(a, b):
    a = torch.as_tensor(a, dtype=torch.float64)
    b = torch.as_tensor(b, dtype=torch.float64)
    return float((a - b).abs().max() / max(float(b.abs().max()), 1e-300))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES: dict[int, str] = {}


def record_acceptance(number: int, title: str, passed: bool, detail: str) -> None:
    ACCEPTANCE_LINES[number] = f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {title} ({detail})"
    print(ACCEPTANCE_LINES[number])


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
