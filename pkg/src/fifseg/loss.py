"""Segmentation objective: weighted soft-Dice + cross-entropy, and the
multi-stage subset aggregation over the four stage-logit maps."""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import torch
import torch.nn.functional as F

from .errors import ConfigError, DataError

DICE_EPS = 1e-5
NUM_STAGES = 4


@dataclass(frozen=True)
class LossWeights:
    lambda1: float = 0.7  # Dice
    lambda2: float = 0.3  # CE

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ConfigError(f"loss weights must be non-negative, got {self}")


class SubsetPrediction(NamedTuple):
    members: tuple[int, ...]  # 1-based stage indices
    R: torch.Tensor


def check_labels(logits: torch.Tensor, labels: torch.Tensor) -> None:
    if logits.dim() != 4 or labels.dim() != 3:
        raise ConfigError(f"expected logits (N,C,H,W) and labels (N,H,W), got {tuple(logits.shape)}, {tuple(labels.shape)}")
    n, c, h, w = logits.shape
    if tuple(labels.shape) != (n, h, w):
        raise ConfigError(f"labels {tuple(labels.shape)} do not match logits {tuple(logits.shape)}")
    bad = (labels < 0) | (labels >= c)
    if bad.any():
        idx = tuple(torch.nonzero(bad)[0].tolist())
        raise DataError(f"label {int(labels[idx])} at index {list(idx)} outside [0, {c})")


def dice_loss(logits: torch.Tensor, labels: torch.Tensor, eps: float = DICE_EPS) -> torch.Tensor:
    """1 - mean over classes of soft Dice between softmax(logits) and one-hot labels.

    Sums run jointly over batch and pixels; every class, background included,
    enters the mean.
    """
    check_labels(logits, labels)
    probs = torch.softmax(logits, dim=1)
    onehot = F.one_hot(labels.long(), logits.shape[1]).permute(0, 3, 1, 2).to(probs.dtype)
    dims = (0, 2, 3)
    inter = (probs * onehot).sum(dims)
    denom = probs.sum(dims) + onehot.sum(dims)
    dice = (2 * inter + eps) / (denom + eps)
    return 1 - dice.mean()


def ce_loss(logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    check_labels(logits, labels)
    return F.cross_entropy(logits, labels.long())


def combined_loss(logits, labels, weights: LossWeights = LossWeights()) -> torch.Tensor:
    return weights.lambda1 * dice_loss(logits, labels) + weights.lambda2 * ce_loss(logits, labels)


def subset_members(num_stages: int = NUM_STAGES) -> list[tuple[int, ...]]:
    """Nonempty subsets of {1..n} in binary-counter order: mask k includes stage j iff bit j-1 is set."""
    return [
        tuple(j + 1 for j in range(num_stages) if mask >> j & 1)
        for mask in range(1, 2**num_stages)
    ]


def mutation_subsets(y1, y2, y3, y4) -> list[SubsetPrediction]:
    ys = (y1, y2, y3, y4)
    for y in ys[1:]:
        if y.shape != y1.shape:
            raise ConfigError(f"stage logits differ in shape: {tuple(y1.shape)} vs {tuple(y.shape)}")
    out = []
    for members in subset_members():
        r = ys[members[0] - 1]
        for j in members[1:]:
            r = r + ys[j - 1]
        out.append(SubsetPrediction(members, r))
    return out


def mutation_total_loss(
    outputs,
    labels: torch.Tensor,
    weights: LossWeights = LossWeights(),
    normalize: bool = False,
) -> torch.Tensor:
    """Loss on the fused logits plus the loss of each of the 15 subset sums (16 terms).

    ``outputs`` is anything with ``logits`` and ``stage_logits`` attributes
    (a model's forward result). Terms are summed unweighted;
    ``normalize=True`` divides the total by 16.
    """
    total = combined_loss(outputs.logits, labels, weights)
    for sp in mutation_subsets(*outputs.stage_logits):
        total = total + combined_loss(sp.R, labels, weights)
    return total / 16 if normalize else total
