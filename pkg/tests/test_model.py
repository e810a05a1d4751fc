import itertools

import pytest
import torch

from fifseg.core import Conv
from fifseg.cose import se_width
from fifseg.encoder import encoder_param_count
from fifseg.errors import ConfigError
from fifseg.loss import mutation_total_loss
from fifseg.model import FIFUNet, ModelConfig, param_breakdown, param_count

TOGGLES = list(itertools.product([False, True], repeat=3))


def hand_ledger(cfg: ModelConfig) -> int:
    """Scalar parameter count derived kernel by kernel, independent of the module tree."""
    c, k = cfg.base_channels, cfg.num_classes
    ch = [c, c, 2 * c, 4 * c, 8 * c]
    total = encoder_param_count(cfg.in_channels, c, cfg.stage_blocks)
    for ci in ch:
        total += 2 * (9 * ci * ci + 2 * ci)  # two conv3x3 + BN
        if cfg.use_cose:
            w = se_width(ci, cfg.se_ratio)
            total += ci * w + w + w * ci + ci
    total += sum(9 * ch[i] * ch[i - 1] + 2 * ch[i - 1] for i in range(1, 5))
    if cfg.use_csi:
        for ci in ch[1:4]:
            ciu = 2 * (ci * ci + 2 * ci) + 2 * (9 * ci * ci + 2 * ci)
            siu = 2 * (ci + 2) + 3
            total += ciu + siu
    if cfg.use_mlf:
        total += sum(ci * k + k for ci in ch[:4]) + 9 * 4 * k + 2 * k + 9 * k * k + k
    else:
        total += c * k + k
    return total


def test_conv_param_count_example():
    assert sum(p.numel() for p in Conv(2, 2, 3).parameters()) == 38


@pytest.mark.parametrize("toggles", TOGGLES)
def test_param_count_matches_hand_ledger(toggles):
    cfg = ModelConfig(use_cose=toggles[0], use_csi=toggles[1], use_mlf=toggles[2])
    assert param_count(cfg) == hand_ledger(cfg)


def test_desk_and_paper_totals():
    assert param_count(ModelConfig()) == 228761
    paper = ModelConfig.paper()
    assert param_count(paper) == hand_ledger(paper)
    parts = param_breakdown(ModelConfig())
    assert parts["encoder"] == 74888
    assert parts["total"] == sum(v for key, v in parts.items() if key != "total")


@pytest.mark.parametrize("cose,mlf", [(False, False), (True, True), (True, False)])
def test_csi_toggle_strictly_decreases(cose, mlf):
    on = ModelConfig(use_cose=cose, use_csi=True, use_mlf=mlf)
    off = ModelConfig(use_cose=cose, use_csi=False, use_mlf=mlf)
    assert param_count(off) < param_count(on)


def test_full_exceeds_baseline():
    assert param_count(ModelConfig()) > param_count(ModelConfig(use_cose=False, use_csi=False, use_mlf=False))


@pytest.mark.parametrize("toggles", TOGGLES)
def test_desk_forward_shapes(toggles):
    cfg = ModelConfig(use_cose=toggles[0], use_csi=toggles[1], use_mlf=toggles[2])
    model = FIFUNet(cfg)
    out = model(torch.rand(2, 1, 64, 64))
    assert out.logits.shape == (2, 5, 64, 64)
    assert len(out.stage_logits) == 4
    assert all(y.shape == out.logits.shape for y in out.stage_logits)
    if not cfg.use_mlf:
        assert all(y is out.logits for y in out.stage_logits)


def test_paper_shapes_on_meta():
    cfg = ModelConfig.paper()
    with torch.device("meta"):
        model = FIFUNet(cfg)
        feats = model.encoder(torch.empty(1, 1, 256, 256))
        xs = model.decode(feats)
        out = model.mlf(xs)
    assert [tuple(x.shape[1:]) for x in xs] == [(96, 128, 128), (96, 64, 64), (192, 32, 32), (384, 16, 16)]
    assert out.logits.shape == (1, 9, 256, 256)
    assert all(y.shape == (1, 9, 256, 256) for y in out.stage_logits)


@pytest.mark.parametrize("shape", [(1, 1, 32, 32), (1, 2, 64, 64), (1, 1, 64), (1, 1, 64, 96)])
def test_input_contract(shape):
    with pytest.raises(ConfigError):
        FIFUNet(ModelConfig())(torch.zeros(*shape))


@pytest.mark.parametrize("bad", [dict(image_size=48), dict(image_size=0), dict(num_classes=1),
                                 dict(stage_blocks=(1, 1, 1)), dict(base_channels=0)])
def test_config_validation(bad):
    with pytest.raises(ConfigError):
        ModelConfig(**bad)


def test_config_round_trip_and_hash():
    cfg = ModelConfig(base_channels=4, seed=3)
    again = ModelConfig.from_dict(cfg.to_dict())
    assert again == cfg
    assert cfg.architecture_hash() == ModelConfig(base_channels=4, seed=9).architecture_hash()
    assert cfg.architecture_hash() != ModelConfig(base_channels=4, use_csi=False).architecture_hash()
    with pytest.raises(ConfigError, match="unknown"):
        ModelConfig.from_dict({"widht": 3})


def test_eval_forward_bitwise_deterministic():
    model = FIFUNet(ModelConfig(image_size=32, base_channels=4)).eval()
    x = torch.rand(2, 1, 32, 32, generator=torch.Generator().manual_seed(0))
    with torch.no_grad():
        a, b = model(x), model(x)
    assert torch.equal(a.logits, b.logits)
    assert all(torch.equal(p, q) for p, q in zip(a.stage_logits, b.stage_logits))


def test_same_seed_same_weights():
    a = FIFUNet(ModelConfig(image_size=32, base_channels=4, seed=5))
    b = FIFUNet(ModelConfig(image_size=32, base_channels=4, seed=5))
    c = FIFUNet(ModelConfig(image_size=32, base_channels=4, seed=6))
    sa, sb, sc = a.state_dict(), b.state_dict(), c.state_dict()
    assert all(torch.equal(sa[k], sb[k]) for k in sa)
    assert not all(torch.equal(sa[k], sc[k]) for k in sa)


@pytest.mark.parametrize("toggles", [(True, True, True), (False, False, False)])
def test_every_parameter_gets_gradient(toggles):
    cfg = ModelConfig(image_size=32, base_channels=4, num_classes=3,
                      use_cose=toggles[0], use_csi=toggles[1], use_mlf=toggles[2])
    model = FIFUNet(cfg)
    g = torch.Generator().manual_seed(1)
    x = torch.rand(4, 1, 32, 32, generator=g)
    y = torch.randint(0, 3, (4, 32, 32), generator=g)
    mutation_total_loss(model(x), y).backward()
    dead = [n for n, p in model.named_parameters() if p.grad is None or not torch.any(p.grad != 0)]
    assert dead == []


def test_injected_features_match_encoder_path():
    model = FIFUNet(ModelConfig(image_size=32, base_channels=4)).eval()
    x = torch.rand(1, 1, 32, 32)
    with torch.no_grad():
        direct = model(x)
        injected = model(features=model.encoder(x))
    assert torch.equal(direct.logits, injected.logits)
