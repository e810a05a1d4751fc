"""Finite-difference gradient checks, one case at a time and then the whole suite.

Every check runs in float64 with central differences. A case passes when the
worst relative error across the sampled entries stays under its tolerance.
"""
import torch

from fifseg.core import grad_check, init_parameters
from fifseg.csi import CIU
from fifseg.harness import gradcheck_suite

torch.manual_seed(0)

# A single case by hand: the channel interaction unit. Weights start at zero
# until init_parameters draws them; both inputs and every weight are checked.
ciu = init_parameters(CIU(3).double(), torch.Generator().manual_seed(0))
x = torch.randn(2, 3, 4, 4, dtype=torch.float64)
y = torch.randn(2, 3, 4, 4, dtype=torch.float64)
rep = grad_check(lambda a, b: torch.cat(ciu(a, b), dim=1), [x, y], params=ciu.named_parameters(), h=1e-5)
print("CIU by hand:", rep.describe())

# The full suite covers primitives, every module and the assembled model.
result = gradcheck_suite()
for case, r in result.results:
    mark = "ok " if r.passed else "BAD"
    print(f"{mark} {case.name:28} max rel err {r.max_rel_err:.2e} (tol {case.tol:g})")
print(f"suite passed: {result.passed} in {result.runtime_s:.1f} s")
