"""DICE and HD95 on 2-D masks, and per-class reports over label maps."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import ndimage

from .errors import ConfigError, DataError

PERCENTILE = 0.95
_FOUR_CONNECTED = ndimage.generate_binary_structure(2, 1)


def _check_pair(pred: np.ndarray, gt: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred, dtype=bool)
    gt = np.asarray(gt, dtype=bool)
    if pred.shape != gt.shape:
        raise ConfigError(f"mask shapes differ: {pred.shape} vs {gt.shape}")
    return pred, gt


def dice_score(pred, gt) -> float:
    pred, gt = _check_pair(pred, gt)
    total = int(pred.sum()) + int(gt.sum())
    if total == 0:
        return 1.0
    return 2.0 * int((pred & gt).sum()) / total


def boundary(mask: np.ndarray) -> np.ndarray:
    """Mask pixels with at least one 4-neighbour outside the mask; the image border counts as outside."""
    mask = np.asarray(mask, dtype=bool)
    return mask & ~ndimage.binary_erosion(mask, _FOUR_CONNECTED, border_value=0)


def nearest_rank(values: np.ndarray, q: float = PERCENTILE) -> float:
    """The ceil(q * n)-th smallest value (1-based)."""
    v = np.sort(np.asarray(values, dtype=np.float64).ravel())
    if v.size == 0:
        raise ValueError("percentile of an empty set")
    k = max(math.ceil(q * v.size), 1)
    return float(v[k - 1])


def _directed(src: np.ndarray, dst: np.ndarray, spacing: tuple[float, float]) -> np.ndarray:
    """Distance from every ``src`` pixel to the nearest ``dst`` pixel."""
    _, (iy, ix) = ndimage.distance_transform_edt(~dst, sampling=spacing, return_indices=True)
    ys, xs = np.nonzero(src)
    dy = (ys - iy[ys, xs]) * spacing[0]
    dx = (xs - ix[ys, xs]) * spacing[1]
    return np.sqrt(dy * dy + dx * dx)


def hd95(pred, gt, spacing: Sequence[float] = (1.0, 1.0)) -> float:
    """Symmetric 95th-percentile Hausdorff distance between mask boundaries.

    Both masks empty gives 0; exactly one empty gives the spacing-scaled
    image diagonal.
    """
    pred, gt = _check_pair(pred, gt)
    sy, sx = float(spacing[0]), float(spacing[1])
    has_p, has_g = pred.any(), gt.any()
    if not has_p and not has_g:
        return 0.0
    if not (has_p and has_g):
        return math.hypot(pred.shape[0] * sy, pred.shape[1] * sx)
    bp, bg = boundary(pred), boundary(gt)
    return max(
        nearest_rank(_directed(bp, bg, (sy, sx))),
        nearest_rank(_directed(bg, bp, (sy, sx))),
    )


@dataclass
class MetricsReport:
    class_names: list[str]
    dice: list[float]
    hd95: list[float]
    mean_dice: float
    mean_hd95: float
    num_slices: int
    aggregation: str = "per-slice 2-D, averaged over slices where the class is present"
    extra: dict = field(default_factory=dict)

    def rows(self) -> list[dict]:
        rows = [
            {"class": name, "dice": d, "hd95": h}
            for name, d, h in zip(self.class_names, self.dice, self.hd95)
        ]
        rows.append({"class": "Average", "dice": self.mean_dice, "hd95": self.mean_hd95})
        return rows

    def to_dict(self) -> dict:
        return {
            "class_names": list(self.class_names),
            "dice": list(self.dice),
            "hd95": list(self.hd95),
            "mean_dice": self.mean_dice,
            "mean_hd95": self.mean_hd95,
            "num_slices": self.num_slices,
            "aggregation": self.aggregation,
            "extra": self.extra,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=["class", "dice", "hd95"], lineterminator="\n")
        w.writeheader()
        for row in self.rows():
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
        return buf.getvalue()

    def save(self, stem: str | Path) -> tuple[Path, Path]:
        stem = Path(stem)
        stem.parent.mkdir(parents=True, exist_ok=True)
        csv_path, json_path = stem.with_suffix(".csv"), stem.with_suffix(".json")
        csv_path.write_text(self.to_csv())
        json_path.write_text(self.to_json())
        return csv_path, json_path


def report(
    pred_labels,
    gt_labels,
    class_names: Sequence[str] | None = None,
    num_classes: int | None = None,
    spacing: Sequence[float] = (1.0, 1.0),
) -> MetricsReport:
    """Per-class DICE/HD95 over a stack of label maps, background (class 0) excluded.

    ``class_names`` lists all classes including background; it fixes the class
    universe. Each foreground class is scored on every slice where it appears
    in the prediction or the ground truth, and those per-slice scores are
    averaged. A class absent from every slice scores DICE 1 and HD95 0.
    """
    pred = np.asarray(pred_labels)
    gt = np.asarray(gt_labels)
    if pred.shape != gt.shape:
        raise ConfigError(f"label maps differ in shape: {pred.shape} vs {gt.shape}")
    if pred.ndim == 2:
        pred, gt = pred[None], gt[None]
    if num_classes is None:
        if class_names is None:
            raise ConfigError("need class_names or num_classes")
        num_classes = len(class_names)
    if class_names is None:
        class_names = ["background"] + [f"class_{c}" for c in range(1, num_classes)]
    if len(class_names) != num_classes:
        raise ConfigError(f"{len(class_names)} class names for {num_classes} classes")
    for name, arr in (("prediction", pred), ("ground truth", gt)):
        bad = (arr < 0) | (arr >= num_classes)
        if bad.any():
            idx = tuple(int(i) for i in np.argwhere(bad)[0])
            raise DataError(f"{name} has unknown class id {arr[idx]} at {list(idx)}")

    dice, hd = [], []
    for c in range(1, num_classes):
        ds, hs = [], []
        for p_slice, g_slice in zip(pred == c, gt == c):
            if not (p_slice.any() or g_slice.any()):
                continue
            ds.append(dice_score(p_slice, g_slice))
            hs.append(hd95(p_slice, g_slice, spacing))
        dice.append(float(np.mean(ds)) if ds else 1.0)
        hd.append(float(np.mean(hs)) if hs else 0.0)
    return MetricsReport(
        class_names=list(class_names[1:]),
        dice=dice,
        hd95=hd,
        mean_dice=float(np.mean(dice)),
        mean_hd95=float(np.mean(hd)),
        num_slices=int(pred.shape[0]),
    )
