"""Checkpoint directories: ``manifest.json`` plus one raw little-endian float32 file per tensor."""
from __future__ import annotations

import json
import re
from pathlib import Path

import numpy as np
import torch

from .errors import ConfigError, DataError
from .model import FIFUNet, ModelConfig

FORMAT = "fifseg-checkpoint/1"
MANIFEST = "manifest.json"


def _filename(i: int, name: str) -> str:
    return f"{i:04d}_{re.sub(r'[^A-Za-z0-9_.]', '_', name)}.bin"


def save_checkpoint(model: FIFUNet, directory: str | Path, extra: dict | None = None) -> Path:
    """Write every parameter and buffer of ``model``; tensors are stored as float32."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, (name, t) in enumerate(model.state_dict().items()):
        fname = _filename(i, name)
        arr = t.detach().cpu().numpy().astype("<f4", copy=False)
        arr.tofile(directory / fname)
        entries.append({"name": name, "shape": list(arr.shape), "dtype": "float32", "file": fname})
    manifest = {
        "format": FORMAT,
        "config": model.config.to_dict(),
        "config_hash": model.config.architecture_hash(),
        "tensors": entries,
        "extra": extra or {},
    }
    (directory / MANIFEST).write_text(json.dumps(manifest, indent=2))
    return directory


def read_manifest(directory: str | Path) -> dict:
    path = Path(directory) / MANIFEST
    if not path.exists():
        raise DataError(f"no checkpoint manifest at {path}")
    manifest = json.loads(path.read_text())
    if manifest.get("format") != FORMAT:
        raise DataError(f"{path}: unsupported checkpoint format {manifest.get('format')!r}")
    return manifest


def load_checkpoint(directory: str | Path, config: ModelConfig | None = None) -> FIFUNet:
    """Rebuild the model stored in ``directory``.

    If ``config`` is given its architecture hash must equal the stored one;
    every tensor's shape is validated against the model the config builds.
    """
    directory = Path(directory)
    manifest = read_manifest(directory)
    stored = ModelConfig.from_dict(manifest["config"])
    if stored.architecture_hash() != manifest["config_hash"]:
        raise DataError(f"{directory}: manifest config does not match its own hash")
    if config is not None and config.architecture_hash() != manifest["config_hash"]:
        raise ConfigError(
            f"checkpoint config hash {manifest['config_hash']} != requested config hash {config.architecture_hash()}"
        )
    model = FIFUNet(config or stored)
    state = model.state_dict()
    names = [e["name"] for e in manifest["tensors"]]
    if set(names) != set(state):
        missing = sorted(set(state) - set(names))
        unexpected = sorted(set(names) - set(state))
        raise DataError(f"{directory}: tensor names differ (missing {missing}, unexpected {unexpected})")
    loaded = {}
    for e in manifest["tensors"]:
        expected = tuple(state[e["name"]].shape)
        if tuple(e["shape"]) != expected:
            raise DataError(f"{directory}: {e['name']} has shape {tuple(e['shape'])}, model expects {expected}")
        arr = np.fromfile(directory / e["file"], dtype="<f4")
        if arr.size != int(np.prod(expected, dtype=np.int64)):
            raise DataError(f"{directory / e['file']}: {arr.size} values, expected shape {expected}")
        loaded[e["name"]] = torch.from_numpy(arr.reshape(expected).astype(np.float32))
    model.load_state_dict(loaded)
    return model
