"""
Index functions for systems that can never be stored
=====================================================

Shows rows of a 10^24-unknown Poisson matrix, a 2^100-state Boolean network
and the lexicographic index map, all without allocating anything of size N^d.
"""
import numpy as np

from nnlinsys.evaluation import make_test_set, residual_l2
from nnlinsys.fnn import Architecture, init_params
from nnlinsys.grid import unzeta, zeta
from nnlinsys.problems import build_pbn, build_poisson

# One row of the d=6, N=10^4 Poisson matrix: at most 13 nonzeros out of 10^24 columns.
poisson = build_poisson(d=6, N=10**4)
k = (1, 5000, 9999, 10000, 2, 77)
row = poisson.oracle.row(k)
print("system size", f"{poisson.grid.size:.0e}", "row", k)
for col, val in zip(row.cols, row.vals):
    print("   ", tuple(int(c) for c in col), f"{val:.4e}")

# Flat positions are exact Python integers, even at 2^100.
big = (2,) * 100
print("zeta of the last PBN state:", zeta(big, 2, 100), "== 2**100:", zeta(big, 2, 100) == 2**100)
print("round trip:", unzeta(zeta(k, 10**4, 6), 10**4, 6) == k)

# A row of the d=100 Boolean network transition operator I - T.
pbn = build_pbn(d=100)
prow = pbn.oracle.row((1,) * 100)
print("PBN row nonzeros:", len(prow.vals), "sum of values:", float(np.sum(prow.vals)))

# The test residual of a random network touches only the sampled rows.
theta = init_params(Architecture(3, 20, 6), seed=0)
T = make_test_set(poisson, 200, seed=1)
print("Res_l2 of a random network on 200 rows:", f"{residual_l2(theta, poisson, T):.3e}")
