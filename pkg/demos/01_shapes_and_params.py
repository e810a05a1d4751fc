"""Walk a batch through the network and see where the parameters live.

The reference-size model is built on the meta device, so no memory is spent
on its weights; shapes and counts come out all the same.
"""
import torch

from fifseg import FIFUNet, ModelConfig
from fifseg.model import param_breakdown

# A desk-size model first: 64x64 inputs, 8 base channels, 5 classes.
desk = ModelConfig()
model = FIFUNet(desk).eval()
img = torch.rand(2, 1, 64, 64)
with torch.no_grad():
    feats = model.encoder(img)
    out = model(img)

print("encoder stages (desk):")
for i, f in enumerate(feats):
    print(f"  stage {i}: {tuple(f.shape)}")
print("fused logits:", tuple(out.logits.shape))
print("per-stage logits:", [tuple(y.shape) for y in out.stage_logits])

# Each of the three modules can be switched off; the counts show what each costs.
for flags in [(False, False, False), (True, False, False), (False, True, False),
              (False, False, True), (True, True, True)]:
    cfg = ModelConfig(use_cose=flags[0], use_csi=flags[1], use_mlf=flags[2])
    print(f"cose={flags[0]!s:5} csi={flags[1]!s:5} mlf={flags[2]!s:5}  params={param_breakdown(cfg)['total']:,}")

# Reference size: 256x256, 96 base channels, 9 classes.
paper = ModelConfig.paper()
with torch.device("meta"):
    big = FIFUNet(paper)
    feats = big.encoder(torch.empty(1, 1, 256, 256))
print("\nreference-size stages:", [tuple(f.shape[1:]) for f in feats])
for name, n in param_breakdown(paper).items():
    print(f"  {name:8} {n:>12,}")
