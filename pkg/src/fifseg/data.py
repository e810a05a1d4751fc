"""Synthetic shape-segmentation data, augmentation, and the on-disk dataset format.

On disk a dataset is a directory of ``image_XXXX.npy`` (float32, H x W) and
``label_XXXX.npy`` (uint8, H x W) pairs plus ``manifest.json`` mapping split
names to id lists::

    {"train": ["0000", "0001"], "val": ["0002"], "test": []}
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import ndimage

from .errors import ConfigError, DataError

SHAPE_KINDS = ("ellipse", "rectangle", "annulus")
SPLITS = ("train", "val", "test")
BACKGROUND_BAND = (0.0, 0.1)


class GenerationError(DataError):
    pass


@dataclass
class Sample:
    image: np.ndarray  # (1, H, W) float32 in [0, 1]
    label: np.ndarray  # (H, W) uint8
    shapes: list[dict] = field(default_factory=list)

    def __post_init__(self):
        if self.image.ndim != 3 or self.image.shape[0] != 1:
            raise DataError(f"image must be (1, H, W), got {self.image.shape}")
        if self.image.shape[1:] != self.label.shape:
            raise DataError(f"image {self.image.shape} and label {self.label.shape} disagree")


def default_bands(num_classes: int) -> list[tuple[float, float]]:
    """Disjoint intensity bands for classes 1..K-1 spread over [0.2, 1.0]."""
    k = num_classes - 1
    width = 0.8 / k
    return [(0.2 + i * width + 0.1 * width, 0.2 + (i + 1) * width - 0.1 * width) for i in range(k)]


@dataclass
class SynthSpec:
    image_size: int = 64
    num_classes: int = 5
    shapes: Sequence[str] | None = None
    bands: Sequence[tuple[float, float]] | None = None
    noise_sigma: float = 0.03
    count: int = 16
    seed: int = 0
    size_range: tuple[float, float] = (0.08, 0.16)
    max_retries: int = 200

    def __post_init__(self):
        k = self.num_classes - 1
        if k < 1:
            raise ConfigError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.shapes is None:
            self.shapes = [SHAPE_KINDS[i % len(SHAPE_KINDS)] for i in range(k)]
        if self.bands is None:
            self.bands = default_bands(self.num_classes)
        self.shapes = list(self.shapes)
        self.bands = [tuple(b) for b in self.bands]
        if len(self.shapes) != k or len(self.bands) != k:
            raise ConfigError(f"need {k} shape kinds and intensity bands, got {len(self.shapes)} / {len(self.bands)}")
        for s in self.shapes:
            if s not in SHAPE_KINDS:
                raise ConfigError(f"unknown shape kind {s!r}")
        if self.noise_sigma < 0 or self.count < 0:
            raise ConfigError("noise_sigma and count must be non-negative")


def rasterize(shape: dict, size: int) -> np.ndarray:
    """Boolean mask of pixel centres inside ``shape``."""
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    dy, dx = yy - shape["cy"], xx - shape["cx"]
    kind = shape["kind"]
    if kind == "ellipse":
        t = shape["angle"]
        u = dx * math.cos(t) + dy * math.sin(t)
        v = -dx * math.sin(t) + dy * math.cos(t)
        return (u / shape["a"]) ** 2 + (v / shape["b"]) ** 2 <= 1.0
    if kind == "rectangle":
        return (np.abs(dy) <= shape["h"] / 2) & (np.abs(dx) <= shape["w"] / 2)
    if kind == "annulus":
        r2 = dy * dy + dx * dx
        return (r2 <= shape["r_outer"] ** 2) & (r2 >= shape["r_inner"] ** 2)
    raise ConfigError(f"unknown shape kind {kind!r}")


def shape_area(shape: dict) -> float:
    kind = shape["kind"]
    if kind == "ellipse":
        return math.pi * shape["a"] * shape["b"]
    if kind == "rectangle":
        return shape["h"] * shape["w"]
    return math.pi * (shape["r_outer"] ** 2 - shape["r_inner"] ** 2)


def shape_perimeter(shape: dict) -> float:
    kind = shape["kind"]
    if kind == "ellipse":
        a, b = shape["a"], shape["b"]
        return math.pi * (3 * (a + b) - math.sqrt((3 * a + b) * (a + 3 * b)))  # Ramanujan
    if kind == "rectangle":
        return 2 * (shape["h"] + shape["w"])
    return 2 * math.pi * (shape["r_outer"] + shape["r_inner"])


def _draw_shape(kind: str, size: int, size_range, rng: np.random.Generator) -> dict:
    lo, hi = size_range[0] * size, size_range[1] * size
    r = rng.uniform(lo, hi)
    margin = 1.25 * hi + 1
    cy, cx = (float(v) for v in rng.uniform(margin, size - 1 - margin, size=2))
    if kind == "ellipse":
        return dict(kind=kind, cy=cy, cx=cx, a=r, b=r * rng.uniform(0.5, 1.0), angle=rng.uniform(0, math.pi))
    if kind == "rectangle":
        return dict(kind=kind, cy=cy, cx=cx, h=2 * r, w=2 * r * rng.uniform(0.5, 1.0))
    return dict(kind=kind, cy=cy, cx=cx, r_outer=r * 1.2, r_inner=r * 0.6)


def synth_sample(spec: SynthSpec, rng: np.random.Generator) -> Sample:
    n = spec.image_size
    label = np.zeros((n, n), dtype=np.uint8)
    image = np.full((n, n), rng.uniform(*BACKGROUND_BAND), dtype=np.float64)
    shapes = []
    for cls, (kind, band) in enumerate(zip(spec.shapes, spec.bands), start=1):
        for _ in range(spec.max_retries):
            shape = _draw_shape(kind, n, spec.size_range, rng)
            mask = rasterize(shape, n)
            # one pixel of clearance so shapes never touch
            if mask.any() and not (ndimage.binary_dilation(mask) & (label > 0)).any():
                break
        else:
            raise GenerationError(
                f"could not place class {cls} ({kind}) without overlap after {spec.max_retries} tries"
            )
        label[mask] = cls
        image[mask] = rng.uniform(*band)
        shapes.append(dict(shape, label=cls))
    if spec.noise_sigma > 0:
        image = image + rng.normal(0.0, spec.noise_sigma, size=image.shape)
    image = np.clip(image, 0.0, 1.0).astype(np.float32)
    return Sample(image[None], label, shapes)


def synth_generate(spec: SynthSpec) -> list[Sample]:
    rng = np.random.default_rng(spec.seed)
    return [synth_sample(spec, rng) for _ in range(spec.count)]


def augment(sample: Sample, rng: np.random.Generator, max_angle: float = 20.0) -> Sample:
    """Random flips, 90-degree rotation and a small-angle rotation.

    Horizontal flip, vertical flip and a 90-degree rotation (k in {1, 2, 3})
    each fire with probability 0.5; the small rotation angle is uniform in
    [-max_angle, max_angle] degrees, bilinear for the image and
    nearest-neighbour for the label. ``max_angle=0`` keeps only the discrete
    symmetries, which permute pixels exactly.
    """
    image = sample.image[0]
    label = sample.label
    if rng.random() < 0.5:
        image, label = image[:, ::-1], label[:, ::-1]
    if rng.random() < 0.5:
        image, label = image[::-1, :], label[::-1, :]
    if rng.random() < 0.5:
        k = int(rng.integers(1, 4))
        image, label = np.rot90(image, k), np.rot90(label, k)
    angle = rng.uniform(-max_angle, max_angle) if max_angle > 0 else 0.0
    if angle != 0.0:
        image = ndimage.rotate(image, angle, reshape=False, order=1, mode="constant", cval=0.0)
        label = ndimage.rotate(label, angle, reshape=False, order=0, mode="constant", cval=0)
        image = np.clip(image, 0.0, 1.0)
    return Sample(
        np.ascontiguousarray(image, dtype=np.float32)[None],
        np.ascontiguousarray(label, dtype=np.uint8),
        sample.shapes,
    )


def write_dataset(samples: Sequence[Sample], path: str | Path, splits: dict[str, Sequence[int]]) -> Path:
    """Write samples as NPY pairs; ``splits`` maps split names to sample indices."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    for i, s in enumerate(samples):
        np.save(path / f"image_{i:04d}.npy", np.ascontiguousarray(s.image[0], dtype=np.float32))
        np.save(path / f"label_{i:04d}.npy", np.ascontiguousarray(s.label, dtype=np.uint8))
    manifest = {name: [f"{i:04d}" for i in splits.get(name, [])] for name in SPLITS}
    (path / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return path


def read_manifest(path: str | Path) -> dict[str, list[str]]:
    mpath = Path(path) / "manifest.json"
    if not mpath.exists():
        raise DataError(f"missing manifest {mpath}")
    try:
        manifest = json.loads(mpath.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"{mpath}: invalid JSON ({exc})") from exc
    if not isinstance(manifest, dict) or not all(isinstance(v, list) for v in manifest.values()):
        raise DataError(f"{mpath}: expected an object of id lists")
    return manifest


def split_counts(path: str | Path) -> dict[str, int]:
    return {k: len(v) for k, v in read_manifest(path).items()}


def load_dataset(path: str | Path, split: str, num_classes: int) -> list[Sample]:
    path = Path(path)
    manifest = read_manifest(path)
    if split not in manifest:
        raise DataError(f"split {split!r} not in {path / 'manifest.json'}")
    samples = []
    for sid in manifest[split]:
        ipath, lpath = path / f"image_{sid}.npy", path / f"label_{sid}.npy"
        for p in (ipath, lpath):
            if not p.exists():
                raise DataError(f"missing file {p}")
        image = np.load(ipath, allow_pickle=False)
        label = np.load(lpath, allow_pickle=False)
        if image.dtype != np.float32 or image.ndim != 2:
            raise DataError(f"{ipath}: expected float32 H x W, got {image.dtype} {image.shape}")
        if label.dtype != np.uint8 or label.ndim != 2:
            raise DataError(f"{lpath}: expected uint8 H x W, got {label.dtype} {label.shape}")
        if image.shape != label.shape:
            raise DataError(f"{ipath} {image.shape} and {lpath} {label.shape} disagree")
        if not np.isfinite(image).all() or image.min() < 0 or image.max() > 1:
            raise DataError(f"{ipath}: intensities must be finite and in [0, 1]")
        if label.max(initial=0) >= num_classes:
            raise DataError(f"{lpath}: label value {int(label.max())} outside [0, {num_classes})")
        samples.append(Sample(image[None], label))
    return samples


def collate(samples: Sequence[Sample]) -> tuple[np.ndarray, np.ndarray]:
    """Stack samples into (N, 1, H, W) float32 images and (N, H, W) int64 labels."""
    images = np.stack([s.image for s in samples]).astype(np.float32)
    labels = np.stack([s.label for s in samples]).astype(np.int64)
    return images, labels
