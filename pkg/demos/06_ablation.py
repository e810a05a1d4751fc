"""Train all eight on/off combinations of the three modules and tabulate them.

A reduced budget keeps this to a few minutes per seed. Pass more seeds for a
steadier mean; the acceptance suite uses three.
"""
import sys
import tempfile

import torch

from fifseg.harness import TrainConfig, ablate

torch.set_num_threads(1)
seeds = [int(s) for s in sys.argv[1:]] or [0]

with tempfile.TemporaryDirectory() as tmp:
    base = TrainConfig.desk(lr=3e-3, epochs=1000, max_steps=400, train_count=32, val_count=16, output_dir=tmp)
    table = ablate(base, seeds=seeds)

print(table.to_csv())
print(f"full {table.full.mean_dice:.4f} vs baseline {table.baseline.mean_dice:.4f}")
