"""DICE and HD95 on masks small enough to check by eye."""
import numpy as np

from fifseg.metrics import boundary, dice_score, hd95, report

# Two 1-pixel blobs three columns apart: HD95 is exactly 3.
a = np.zeros((5, 8), bool)
b = np.zeros((5, 8), bool)
a[2, 1] = True
b[2, 4] = True
print("hd95 of shifted points:", hd95(a, b))

# Half the pixels overlap: DICE is 0.5.
p = np.zeros((4, 4), bool)
q = np.zeros((4, 4), bool)
p[0] = True
q[0, 2:] = True
q[1, :2] = True
print("dice of half overlap:", dice_score(p, q))

# Only the 4-connected edge of a square takes part in the distance.
sq = np.zeros((6, 6), bool)
sq[1:5, 1:5] = True
print("boundary of a 4x4 square:\n", boundary(sq).astype(int))

# Spacing stretches the grid; an empty side returns the image diagonal.
print("anisotropic:", hd95(a, b, spacing=(1.0, 0.5)))
print("one side empty:", hd95(a, np.zeros_like(a)))

# A labelled volume: per-slice scores, averaged where each class shows up.
rng = np.random.default_rng(0)
gt = rng.integers(0, 3, size=(4, 16, 16)).astype(np.uint8)
pred = gt.copy()
pred[0, :4] = 0
print(report(pred, gt, num_classes=3).to_csv())
