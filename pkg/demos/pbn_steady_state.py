"""
Boolean network steady state vs power iteration
================================================

For d=10 the 1024-state transition matrix is small enough for power
iteration, so the mean-normalized network solution can be compared with the
exact stationary distribution.
"""
import numpy as np

from nnlinsys import dense_oracle as do
from nnlinsys.evaluation import all_indices
from nnlinsys.fnn import Architecture, batch_forward
from nnlinsys.grid import points_of
from nnlinsys.problems import PBN_SHIFTS, PBN_VALUES, build_pbn
from nnlinsys.solver import TrainConfig, train

# Reference stationary vector, scaled to mean 1 like the penalty does.
inst = build_pbn(d=10)
ref = do.stationary_distribution(do.pbn_transition(10, PBN_SHIFTS, PBN_VALUES))

# Train with the batch-mean penalty pushing the mean of u towards 1.
cfg = TrainConfig(batch_size=1024, max_iters=3000, optimizer="adam", seed=0, eval_every=1000)
theta, hist = train(inst, Architecture(3, 100, 10), cfg)
for r in hist.records:
    print(f"iter {r.iter:5d}  loss {r.loss:.3e}")

# Compare on all 1024 states.
u = batch_forward(theta, points_of(inst.grid, all_indices(inst.grid.shape)))
u /= u.mean()
print("relative l2 error vs power iteration:", f"{np.linalg.norm(u - ref) / np.linalg.norm(ref):.3e}")
print("largest reference probabilities (mean-1 scale):", np.round(np.sort(ref)[-5:], 3))
