"""Drive one batch of four slices to a high DICE.

This is the quickest way to see that forward, loss and optimizer agree with
each other. Expect a few minutes on one CPU thread.
"""
import tempfile

import torch

from fifseg.harness import TrainConfig, evaluate_model, train
from fifseg.harness.train import prepare_data

torch.set_num_threads(1)

with tempfile.TemporaryDirectory() as tmp:
    cfg = TrainConfig.desk(overfit=True, epochs=2000, max_steps=2000, stop_at_dice=0.95, output_dir=tmp)
    result = train(cfg, save=False)
    batch, _ = prepare_data(cfg)
    rep = evaluate_model(result.model, batch)

losses = result.step_losses
print(f"steps: {len(losses)}")
for i in range(0, len(losses), max(1, len(losses) // 10)):
    print(f"  step {i + 1:4d}  loss {losses[i]:.4f}")
print(rep.to_csv())
