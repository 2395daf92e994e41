"""
Overflow queueing network: steady state and 2-D slices
=======================================================

Trains the pinned least-squares model for a three-queue overflow network,
finds where the solution peaks and writes a 2-D slice through that point
as CSV (plotting is left to external tools).
"""
import sys
from pathlib import Path

from nnlinsys.cli import write_slice_csv
from nnlinsys.evaluation import argmax_scan, make_test_set, residual_l2, slice_2d
from nnlinsys.fnn import Architecture
from nnlinsys.problems import build_queueing
from nnlinsys.solver import TrainConfig, train

# Three queues with 20 states each; the first component of u is pinned to 1.
inst = build_queueing(d=3, N=20)
T = make_test_set(inst, 2000, seed=1)

# Train; the residual is reported because no closed-form solution exists.
cfg = TrainConfig(batch_size=500, max_iters=3000, optimizer="adam", seed=0, eval_every=1000)
theta, hist = train(inst, Architecture(3, 50, 3), cfg, test_set=T)
for r in hist.records:
    print(f"iter {r.iter:5d}  loss {r.loss:.3e}  Res_l2 {r.res_l2:.3e}")
print("final Res_l2:", f"{residual_l2(theta, inst, T):.3e}")

# Locate the maximum, then slice through it along the first two queues.
x_max, v_max = argmax_scan(theta, inst.grid)
print("maximum", f"{v_max:.4f}", "at", x_max)
S = slice_2d(theta, inst.grid, x_max, (0, 1))
out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path("queueing_slice.csv")
write_slice_csv(out, S)
print("slice", S.shape, "written to", out)
