"""
Small Poisson system: network solution vs direct solve
=======================================================

Trains a ReLU network on the 2-D Poisson system with 8x8 unknowns,
compares it with a dense direct solve and checks the a posteriori bound
||Phi - u|| <= ||A^-1|| sqrt(n L(theta)).
"""
import numpy as np

from nnlinsys import dense_oracle as do
from nnlinsys.evaluation import all_indices, full_loss, make_test_set, residual_error_bound
from nnlinsys.fnn import Architecture, batch_forward
from nnlinsys.grid import points_of
from nnlinsys.problems import build_poisson
from nnlinsys.solver import TrainConfig, train

# Build the instance: rows of A and entries of b come from index functions.
inst = build_poisson(d=2, N=8)
print(inst.label, "unknowns:", inst.grid.size)

# Train a 3-layer network; every iteration samples a fresh batch of rows.
cfg = TrainConfig(batch_size=64, max_iters=5000, optimizer="adam", seed=0, eval_every=1000)
theta, hist = train(inst, Architecture(3, 50, 2), cfg, test_set=make_test_set(inst))
for r in hist.records:
    print(f"iter {r.iter:5d}  batch loss {r.loss:.3e}  e_l2 {r.e_l2:.3e}")

# Dense reference: this size is small enough to assemble A and solve directly.
system = do.densify(inst.oracle)
u = do.dense_solve(system)
X = points_of(inst.grid, all_indices(inst.grid.shape))
phi = batch_forward(theta, X)
err = np.linalg.norm(phi - u)

# The residual bound needs only the smallest singular value and the full loss.
inv_norm = 1 / np.linalg.svd(system.matrix, compute_uv=False).min()
bound = residual_error_bound(inv_norm, inst.grid.size, full_loss(theta, inst))
print(f"||Phi - u||_2 = {err:.3e}  bound = {bound:.3e}  holds: {err <= bound}")
