"""Module ablation over the (CoSE, CSI, MLF) toggle cube."""
from __future__ import annotations

import csv
import dataclasses
import io
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from ..model import param_count
from .config import TrainConfig
from .train import prepare_data, train

log = logging.getLogger(__name__)

# baseline, single modules, pairs, full model
TOGGLE_ROWS: tuple[tuple[bool, bool, bool], ...] = (
    (False, False, False),
    (True, False, False),
    (False, True, False),
    (False, False, True),
    (True, True, False),
    (True, False, True),
    (False, True, True),
    (True, True, True),
)


@dataclass
class AblationRow:
    use_cose: bool
    use_csi: bool
    use_mlf: bool
    params: int
    mean_dice: float
    mean_hd95: float
    class_dice: list[float]
    seed_dice: list[float] = field(default_factory=list)
    seed_hd95: list[float] = field(default_factory=list)


@dataclass
class AblationTable:
    rows: list[AblationRow]
    class_names: list[str]
    seeds: list[int]

    def row(self, use_cose: bool, use_csi: bool, use_mlf: bool) -> AblationRow:
        for r in self.rows:
            if (r.use_cose, r.use_csi, r.use_mlf) == (use_cose, use_csi, use_mlf):
                return r
        raise KeyError((use_cose, use_csi, use_mlf))

    @property
    def baseline(self) -> AblationRow:
        return self.row(False, False, False)

    @property
    def full(self) -> AblationRow:
        return self.row(True, True, True)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["CoSE", "CSI", "MLF", "params", "DICE", "HD95", *self.class_names])
        mark = {True: "Y", False: "N"}
        for r in self.rows:
            w.writerow([
                mark[r.use_cose], mark[r.use_csi], mark[r.use_mlf], r.params,
                f"{r.mean_dice:.6f}", f"{r.mean_hd95:.6f}", *(f"{d:.6f}" for d in r.class_dice),
            ])
        return buf.getvalue()

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_csv())
        return path


def ablate(base: TrainConfig, seeds: Sequence[int] = (0, 1, 2), save_runs: bool = False) -> AblationTable:
    """Train and score all eight toggle combinations with a shared budget.

    For each seed the data set is generated once and reused by all variants.
    Each variant is scored by its best-validation epoch (the same selection
    rule ``train`` uses for checkpoints), averaged over seeds.
    """
    per_variant: dict[tuple[bool, bool, bool], list] = {t: [] for t in TOGGLE_ROWS}
    class_names = None
    for seed in seeds:
        seeded = base.replace(seed=seed, model={"seed": seed})
        data = prepare_data(seeded)
        for toggles in TOGGLE_ROWS:
            cose, csi, mlf = toggles
            cfg = seeded.replace(
                model={"use_cose": cose, "use_csi": csi, "use_mlf": mlf},
                output_dir=str(Path(base.output_dir) / f"seed{seed}_cose{int(cose)}_csi{int(csi)}_mlf{int(mlf)}"),
            )
            result = train(cfg, data=data, save=save_runs)
            rep = result.best_report
            class_names = rep.class_names
            per_variant[toggles].append(rep)
            log.info("seed %d toggles %s: dice %.4f hd95 %.3f", seed, toggles, rep.mean_dice, rep.mean_hd95)

    rows = []
    for toggles, reps in per_variant.items():
        cfg = dataclasses.replace(base.model, use_cose=toggles[0], use_csi=toggles[1], use_mlf=toggles[2])
        rows.append(AblationRow(
            *toggles,
            params=param_count(cfg),
            mean_dice=float(np.mean([r.mean_dice for r in reps])),
            mean_hd95=float(np.mean([r.mean_hd95 for r in reps])),
            class_dice=[float(v) for v in np.mean([r.dice for r in reps], axis=0)],
            seed_dice=[r.mean_dice for r in reps],
            seed_hd95=[r.mean_hd95 for r in reps],
        ))
    return AblationTable(rows, class_names or [], list(seeds))
