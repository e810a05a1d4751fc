"""Training loop, evaluation and run records."""
from __future__ import annotations

import json
import logging
import subprocess
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .. import __version__
from ..checkpoint import load_checkpoint, save_checkpoint
from ..data import Sample, SynthSpec, augment, collate, load_dataset, synth_generate
from ..errors import NumericError
from ..loss import combined_loss, mutation_total_loss
from ..metrics import MetricsReport, report
from ..model import FIFUNet, ModelConfig
from .config import TrainConfig

log = logging.getLogger(__name__)


@dataclass
class EpochRecord:
    epoch: int
    steps: int
    train_loss: float
    val_dice: float
    val_hd95: float
    wall_time: float


@dataclass
class RunRecord:
    config: dict
    config_hash: str
    provenance: str
    epochs: list[EpochRecord] = field(default_factory=list)
    best_epoch: int | None = None
    best_val_dice: float | None = None
    selection: str = "best validation mean DICE"
    cli_args: list[str] | None = None

    def losses(self) -> list[float]:
        return [e.train_loss for e in self.epochs]

    def to_dict(self) -> dict:
        return asdict(self)

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=2))
        return path


@dataclass
class TrainResult:
    record: RunRecord
    checkpoint: Path
    model: FIFUNet
    step_losses: list[float]
    best_report: MetricsReport | None = None


def provenance() -> str:
    try:
        rev = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            cwd=Path(__file__).parent, capture_output=True, text=True, timeout=5,
        ).stdout.strip()
    except (OSError, subprocess.SubprocessError):
        rev = ""
    return f"fifseg {__version__}" + (f" ({rev})" if rev else "")


def prepare_data(config: TrainConfig) -> tuple[list[Sample], list[Sample]]:
    m = config.model
    if config.data_dir:
        train = load_dataset(config.data_dir, "train", m.num_classes)
        val = load_dataset(config.data_dir, "val", m.num_classes)
    else:
        spec = SynthSpec(
            image_size=m.image_size, num_classes=m.num_classes, noise_sigma=config.noise_sigma,
            count=config.train_count + config.val_count, seed=config.seed,
        )
        samples = synth_generate(spec)
        train, val = samples[: config.train_count], samples[config.train_count:]
    if config.overfit:
        train = train[: config.batch_size]
        val = train
    return train, val


def _to_tensors(samples: Sequence[Sample], dtype=torch.float32):
    images, labels = collate(samples)
    return torch.from_numpy(images).to(dtype), torch.from_numpy(labels)


@torch.no_grad()
def predict(model: FIFUNet, samples: Sequence[Sample], batch_size: int = 8) -> np.ndarray:
    """Argmax label maps (N, H, W) in eval mode; restores the model's mode afterwards."""
    was_training = model.training
    model.eval()
    dtype = next(model.parameters()).dtype
    preds = []
    try:
        for i in range(0, len(samples), batch_size):
            x, _ = _to_tensors(samples[i:i + batch_size], dtype)
            preds.append(model(x).logits.argmax(1).numpy().astype(np.uint8))
    finally:
        model.train(was_training)
    return np.concatenate(preds)


def evaluate_model(model: FIFUNet, samples: Sequence[Sample], class_names=None) -> MetricsReport:
    pred = predict(model, samples)
    gt = np.stack([s.label for s in samples])
    return report(pred, gt, class_names, num_classes=model.config.num_classes)


def train(
    config: TrainConfig,
    data: tuple[Sequence[Sample], Sequence[Sample]] | None = None,
    save: bool = True,
    cli_args: Sequence[str] | None = None,
) -> TrainResult:
    """AdamW on the multi-stage loss (or the fused-logit loss alone when
    ``mutation_enabled`` is off). Validation after every epoch; the best
    validation-DICE weights are kept in ``output_dir/best``.
    """
    torch.set_num_threads(config.threads)
    torch.manual_seed(config.seed)
    train_set, val_set = data if data is not None else prepare_data(config)
    if not train_set:
        raise NumericError("empty training set")
    out_dir = Path(config.output_dir)
    model = FIFUNet(config.model)
    opt = torch.optim.AdamW(
        model.parameters(), lr=config.lr, weight_decay=config.weight_decay, betas=config.betas
    )
    weights = config.loss_weights
    record = RunRecord(config.to_dict(), config.model.architecture_hash(), provenance())
    if cli_args is not None:
        record.cli_args = list(cli_args)
    best_dir = out_dir / "best"
    step_losses: list[float] = []
    steps = 0
    start = time.perf_counter()
    best_state = None
    best_report = None

    for epoch in range(1, config.epochs + 1):
        model.train()
        rng = np.random.default_rng([config.seed, 0, epoch])
        order = np.arange(len(train_set)) if config.overfit else rng.permutation(len(train_set))
        epoch_losses = []
        for i in range(0, len(order), config.batch_size):
            if config.max_steps is not None and steps >= config.max_steps:
                break
            batch = [train_set[j] for j in order[i:i + config.batch_size]]
            if config.augment and not config.overfit:
                batch = [augment(s, rng) for s in batch]
            x, y = _to_tensors(batch)
            opt.zero_grad(set_to_none=True)
            outputs = model(x)
            if config.mutation_enabled:
                loss = mutation_total_loss(outputs, y, weights, config.normalize_mutation)
            else:
                loss = combined_loss(outputs.logits, y, weights)
            if not torch.isfinite(loss):
                last_good = out_dir / "last_good"
                if save:
                    save_checkpoint(model, last_good, {"epoch": epoch, "steps": steps})
                raise NumericError(
                    f"non-finite loss {loss.item()} at epoch {epoch}, step {steps + 1}; "
                    f"last good weights in {last_good}"
                )
            loss.backward()
            opt.step()
            steps += 1
            step_losses.append(loss.item())
            epoch_losses.append(loss.item())
        if not epoch_losses:
            break
        val = evaluate_model(model, val_set)
        rec = EpochRecord(
            epoch, steps, float(np.mean(epoch_losses)), val.mean_dice, val.mean_hd95,
            time.perf_counter() - start,
        )
        record.epochs.append(rec)
        log.info("epoch %d step %d loss %.4f val dice %.4f hd95 %.3f",
                 epoch, steps, rec.train_loss, rec.val_dice, rec.val_hd95)
        if record.best_val_dice is None or val.mean_dice > record.best_val_dice:
            record.best_epoch, record.best_val_dice = epoch, val.mean_dice
            best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}
            best_report = val
        if config.max_steps is not None and steps >= config.max_steps:
            break
        if config.stop_at_dice is not None and val.mean_dice > config.stop_at_dice:
            break

    if best_state is not None:
        final_state = {k: v.detach().clone() for k, v in model.state_dict().items()}
        model.load_state_dict(best_state)
        if save:
            save_checkpoint(model, best_dir, {"epoch": record.best_epoch, "val_dice": record.best_val_dice})
        model.load_state_dict(final_state)
    if save:
        save_checkpoint(model, out_dir / "last", {"epoch": len(record.epochs), "steps": steps})
        record.save(out_dir / "run_record.json")
        (out_dir / "config.json").write_text(json.dumps(config.to_dict(), indent=2))
    return TrainResult(record, best_dir, model, step_losses, best_report)


def evaluate(
    checkpoint: str | Path,
    samples: Sequence[Sample],
    config: ModelConfig | None = None,
    class_names=None,
    out: str | Path | None = None,
    png_dir: str | Path | None = None,
) -> MetricsReport:
    """Score a checkpoint on ``samples``; refuses if ``config`` hashes differently."""
    model = load_checkpoint(checkpoint, config)
    pred = predict(model, samples)
    gt = np.stack([s.label for s in samples])
    rep = report(pred, gt, class_names, num_classes=model.config.num_classes)
    if out is not None:
        rep.save(out)
    if png_dir is not None:
        save_overlays(samples, pred, png_dir, model.config.num_classes)
    return rep


def save_overlays(samples: Sequence[Sample], pred: np.ndarray, directory: str | Path, num_classes: int) -> list[Path]:
    """Side-by-side PNGs: image | prediction | label."""
    from PIL import Image

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    scale = 255.0 / max(num_classes - 1, 1)
    paths = []
    for i, (s, p) in enumerate(zip(samples, pred)):
        img = (s.image[0] * 255).round().astype(np.uint8)
        row = np.concatenate([img, (p * scale).astype(np.uint8), (s.label * scale).astype(np.uint8)], axis=1)
        path = directory / f"overlay_{i:04d}.png"
        Image.fromarray(row).save(path)
        paths.append(path)
    return paths
