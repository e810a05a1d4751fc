import math

import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import randn, seeded
from fifseg import core
from fifseg.core import BatchNorm, Conv, grad_check
from fifseg.errors import ConfigError, DegenerateBatchError


def test_conv_identity_kernel():
    x = randn(1, 3, 5, 5)
    w = torch.zeros(3, 3, 1, 1, dtype=torch.float64)
    for c in range(3):
        w[c, c] = 1.0
    assert torch.equal(core.conv2d(x, w), x)


def test_conv_zero_weights_give_bias():
    x = randn(2, 2, 4, 4)
    w = torch.zeros(3, 2, 3, 3, dtype=torch.float64)
    b = torch.tensor([1.0, -2.0, 0.5], dtype=torch.float64)
    out = core.conv2d(x, w, b, padding=1)
    assert out.shape == (2, 3, 4, 4)
    assert torch.equal(out, b.view(1, 3, 1, 1).expand_as(out))


def test_conv_ones_kernel_on_constant_interior():
    # 3x3 all-ones kernel on a constant v image: interior pixels see 9 v
    v = 1.5
    x = torch.full((1, 1, 5, 5), v, dtype=torch.float64)
    w = torch.ones(1, 1, 3, 3, dtype=torch.float64)
    out = core.conv2d(x, w, padding=1)
    assert torch.all(out[0, 0, 1:-1, 1:-1] == 9 * v)
    assert out[0, 0, 0, 0] == 4 * v


@pytest.mark.parametrize("bad", [
    dict(weight=torch.zeros(2, 3, 3, 3)),          # channel mismatch
    dict(weight=torch.zeros(3, 1, 3, 3), groups=2),  # groups do not divide
    dict(weight=torch.zeros(2, 2, 3, 3), bias=torch.zeros(3)),
])
def test_conv_contract_errors(bad):
    x = torch.zeros(1, 2, 4, 4)
    kw = dict(bad)
    with pytest.raises(ConfigError):
        core.conv2d(x, kw.pop("weight"), **kw)


def test_conv_rejects_rank3():
    with pytest.raises(ConfigError, match="rank-4"):
        core.conv2d(torch.zeros(2, 4, 4), torch.zeros(2, 2, 1, 1))


@settings(max_examples=25, deadline=None)
@given(a=st.floats(-3, 3), b=st.floats(-3, 3), seed=st.integers(0, 10_000))
def test_conv_linearity(a, b, seed):
    g = seeded(seed)
    x, y = randn(1, 2, 4, 4, gen=g), randn(1, 2, 4, 4, gen=g)
    w = randn(3, 2, 3, 3, gen=g)
    lhs = core.conv2d(a * x + b * y, w, padding=1)
    rhs = a * core.conv2d(x, w, padding=1) + b * core.conv2d(y, w, padding=1)
    assert torch.allclose(lhs, rhs, atol=1e-6, rtol=0)


def test_group_conv_unit_kernels_identity():
    x = randn(2, 4, 3, 3)
    w = torch.ones(4, 1, 1, 1, dtype=torch.float64)
    assert torch.equal(core.group_conv2d(x, w, None, groups=4), x)


def test_group_conv_hand_dot_products():
    # g=2, C_in=4, C_out=2 on a 1x1 input: out_j = <w_j, x_block_j>
    x = torch.tensor([1.0, 2.0, 3.0, 4.0], dtype=torch.float64).view(1, 4, 1, 1)
    w = torch.tensor([[5.0, 6.0], [7.0, 8.0]], dtype=torch.float64).view(2, 2, 1, 1)
    out = core.group_conv2d(x, w, None, groups=2).flatten().tolist()
    assert out == [1 * 5 + 2 * 6, 3 * 7 + 4 * 8]


@pytest.mark.parametrize("block", [0, 1, 2])
def test_group_conv_block_isolation_bitwise(block):
    g = seeded(block)
    x = randn(1, 6, 4, 4, gen=g)
    w = randn(3, 2, 3, 3, gen=g)
    base = core.group_conv2d(x, w, None, groups=3, padding=1)
    x2 = x.clone()
    x2[:, 2 * block:2 * block + 2] += randn(1, 2, 4, 4, gen=g)
    out = core.group_conv2d(x2, w, None, groups=3, padding=1)
    for j in range(3):
        same = torch.equal(out[:, j], base[:, j])
        assert same == (j != block)


def test_group_conv_divisibility():
    with pytest.raises(ConfigError, match="groups"):
        core.group_conv2d(torch.zeros(1, 3, 2, 2), torch.zeros(2, 1, 1, 1), None, groups=2)


def test_batchnorm_train_normalizes_and_updates_running_stats():
    x = randn(4, 3, 5, 5) * 3 + 2
    bn = BatchNorm(3).double()
    out = bn(x)
    assert torch.allclose(out.mean(dim=(0, 2, 3)), torch.zeros(3, dtype=torch.float64), atol=1e-12)
    var = out.var(dim=(0, 2, 3), unbiased=False)
    assert torch.allclose(var, torch.ones(3, dtype=torch.float64), atol=1e-4)
    expected = 0.1 * x.mean(dim=(0, 2, 3))
    assert torch.allclose(bn.running_mean, expected)


def test_batchnorm_eval_is_affine():
    x = randn(2, 2, 3, 3)
    bn = BatchNorm(2).double().eval()
    with torch.no_grad():
        bn.weight.copy_(torch.tensor([2.0, -1.0]))
        bn.bias.copy_(torch.tensor([0.5, 0.0]))
    out = bn(x)
    expected = x / math.sqrt(1 + 1e-5) * torch.tensor([2.0, -1.0]).view(1, 2, 1, 1).double()
    expected = expected + torch.tensor([0.5, 0.0]).view(1, 2, 1, 1).double()
    assert torch.allclose(out, expected, atol=1e-14)


def test_batchnorm_single_value_rejected_in_training():
    bn = BatchNorm(2)
    with pytest.raises(DegenerateBatchError):
        bn(torch.zeros(1, 2, 1, 1))
    bn.eval()
    assert bn(torch.zeros(1, 2, 1, 1)).shape == (1, 2, 1, 1)


def test_activations():
    x = torch.tensor([-1.0, 2.0], dtype=torch.float64)
    assert core.activation(x, "relu").tolist() == [0.0, 2.0]
    assert core.activation(torch.zeros(1), "sigmoid").item() == 0.5
    s = core.activation(torch.tensor([-30.0, -1.0, 0.0, 1.0, 30.0], dtype=torch.float64), "sigmoid")
    assert torch.isfinite(s).all() and (s > 0).all() and (s < 1).all()
    assert (s[1:] > s[:-1]).all()
    with pytest.raises(ConfigError):
        core.activation(x, "tanh")


def test_pool_hand_values():
    x = torch.tensor([[1.0, 2.0], [3.0, 4.0]], dtype=torch.float64).view(1, 1, 2, 2)
    assert core.adaptive_avg_pool_1x1(x).item() == 2.5
    c = torch.full((2, 3, 4, 5), 7.25, dtype=torch.float64)
    out = core.adaptive_avg_pool_1x1(c)
    assert out.shape == (2, 3, 1, 1) and torch.all(out == 7.25)
    y = randn(1, 2, 3, 3)
    assert torch.allclose(core.adaptive_avg_pool_1x1(-3 * y), -3 * core.adaptive_avg_pool_1x1(y))


def test_upsample_hand_row():
    x = torch.tensor([0.0, 1.0], dtype=torch.float64).view(1, 1, 1, 2)
    out = core.bilinear_upsample(x, 2)
    assert out.shape == (1, 1, 2, 4)
    assert out[0, 0, 0].tolist() == [0.0, 0.25, 0.75, 1.0]


@pytest.mark.parametrize("factor", [2, 4, 8, 16])
@pytest.mark.parametrize("v", [0.5, 1.0, 7.0, -3.25])
def test_upsample_constant_dyadic_exact(factor, v):
    x = torch.full((1, 2, 3, 3), v, dtype=torch.float64)
    out = core.bilinear_upsample(x, factor)
    assert out.shape == (1, 2, 3 * factor, 3 * factor)
    assert torch.all(out == v)
    assert out.mean().item() == v


@pytest.mark.parametrize("factor", [2, 4, 8, 16])
def test_upsample_constant_within_one_ulp(factor):
    # interpolation weights are dyadic, so only the product rounding remains
    v = 0.3
    out = core.bilinear_upsample(torch.full((1, 1, 3, 3), v, dtype=torch.float64), factor)
    assert (out - v).abs().max().item() <= math.ulp(v)


@pytest.mark.parametrize("factor", [1, 3, 32])
def test_upsample_bad_factor(factor):
    with pytest.raises(ConfigError, match="factor"):
        core.bilinear_upsample(torch.zeros(1, 1, 2, 2), factor)


def test_conv_module_default_padding():
    m = Conv(2, 3, 3)
    assert m(torch.zeros(1, 2, 5, 5)).shape == (1, 3, 5, 5)
    assert Conv(2, 3, 3, stride=2)(torch.zeros(1, 2, 6, 6)).shape == (1, 3, 3, 3)


# ---- grad_check ------------------------------------------------------------

def test_grad_check_sigmoid_at_zero():
    rep = grad_check(torch.sigmoid, [torch.zeros(1, dtype=torch.float64)], tol=1e-6)
    assert rep.passed and rep.max_rel_err < 1e-6
    x = torch.zeros(1, dtype=torch.float64, requires_grad=True)
    torch.sigmoid(x).sum().backward()
    assert x.grad.item() == 0.25


def test_grad_check_relu_away_from_kink():
    x = torch.tensor([-2.0, -0.5, 0.7, 3.0], dtype=torch.float64)
    rep = grad_check(torch.relu, [x])
    assert rep.passed and rep.max_rel_err < 1e-10


def test_grad_check_conv():
    g = seeded(3)
    w = randn(2, 2, 3, 3, gen=g).requires_grad_(True)
    b = randn(2, gen=g).requires_grad_(True)
    rep = grad_check(
        lambda x: core.conv2d(x, w, b, padding=1), [randn(1, 2, 4, 4, gen=g)], [("weight", w), ("bias", b)]
    )
    assert rep.passed and rep.max_rel_err < 1e-4
    assert {t.name for t in rep.tensors} == {"input0", "weight", "bias"}


class _Corrupt(torch.autograd.Function):
    """Square in the forward pass, with a deliberately wrong backward at one entry."""

    @staticmethod
    def forward(ctx, x):
        ctx.save_for_backward(x)
        return x * x

    @staticmethod
    def backward(ctx, g):
        (x,) = ctx.saved_tensors
        grad = 2 * x * g
        grad.view(-1)[5] += 1.0
        return grad


def test_grad_check_reports_corrupted_gradient_location():
    x = randn(1, 2, 3, 3)
    rep = grad_check(_Corrupt.apply, [x])
    assert not rep.passed
    worst = rep.worst
    assert worst.name == "input0"
    assert worst.index == tuple(int(i) for i in torch.unravel_index(torch.tensor(5), x.shape)) == (0, 0, 1, 2)
    assert "FAIL" in rep.describe() and "input0[0, 0, 1, 2]" in rep.describe()


def test_grad_check_non_finite_output():
    rep = grad_check(lambda x: torch.log(x), [torch.tensor([1.0, -1.0], dtype=torch.float64)])
    assert not rep.passed and "non-finite output" in rep.error and "[1]" in rep.error


def test_grad_check_sampling_limits_entries():
    x = randn(1, 3, 8, 8)
    rep = grad_check(torch.tanh, [x], max_entries=10)
    assert rep.passed and rep.tensors[0].checked == 10
