"""Dense small-instance checks behind ``nnlinsys verify``.

Every check returns a dict ``{name, passed, measured, tolerance}``; the
measured value is the worst discrepancy seen. Gradient checks report the
worst ratio ``|g - fd| / (1e-5 |fd| + 1e-8)``, so they pass at ratio <= 1.
"""
from __future__ import annotations

import numpy as np

from . import dense_oracle as do
from . import fnn
from .evaluation import all_indices, full_loss, residual_error_bound
from .fnn import Architecture
from .grid import points_of, sample_indices
from .problems import PBN_SHIFTS, PBN_VALUES, build_pbn, build_poisson, build_queueing, build_riesz
from .solver import Plain, TrainConfig, batch_loss_and_grad, train

__all__ = ["run_checks", "CHECKS"]


def _result(name, measured, tol, ok=None):
    measured = float(measured)
    passed = bool(measured <= tol) if ok is None else bool(ok)
    return {"name": name, "passed": passed, "measured": measured, "tolerance": tol}


def _row_equality(name, oracle, dense):
    got = do.densify(oracle).matrix
    diff = np.max(np.abs(got - dense)) if got.shape == dense.shape else np.inf
    return _result(name, diff, 0.0, ok=got.shape == dense.shape and np.array_equal(got, dense))


def check_rows_poisson():
    return _row_equality("rows_poisson_d2_N4", build_poisson(2, 4).oracle, do.poisson_matrix(2, 4))


def check_rows_riesz():
    return _row_equality("rows_riesz_d2_N6", build_riesz(2, 6).oracle, do.riesz_matrix(2, 6))


def check_rows_queueing():
    lam, s = [0.01, 0.01], [2, 4]
    return _row_equality("rows_queueing_d2_N8", build_queueing(2, 8, s=s).oracle,
                         do.queueing_matrix(2, 8, 1.0, lam, s))


def check_rows_pbn():
    return _row_equality("rows_pbn_d10", build_pbn(10).oracle, do.pbn_matrix(10, PBN_SHIFTS, PBN_VALUES))


def min_preactivation(theta, X) -> float:
    """Smallest ``|pre-activation|`` over all hidden units and rows of ``X``."""
    h, best = np.atleast_2d(X), np.inf
    for W, b in zip(theta.weights, theta.biases):
        z = h @ W.T + b
        best = min(best, float(np.min(np.abs(z))))
        h = np.maximum(z, 0)
    return best


def _rel(a, b, rtol=1e-5, atol=1e-8):
    """Worst ``|a - b| / (rtol |b| + atol)``; at most 1 means within tolerance."""
    return float(np.max(np.abs(a - b) / (rtol * np.abs(b) + atol)))


def check_point_gradients(n=100, seed=0, step=1e-6):
    rng = np.random.default_rng(seed)
    worst, done = 0.0, 0
    while done < n:
        arch = Architecture(int(rng.integers(2, 5)), int(rng.integers(1, 7)), int(rng.integers(1, 4)))
        theta = fnn.init_params(arch, seed=rng)
        x = rng.uniform(-1, 1, arch.d)
        if min_preactivation(theta, x) < 1e-6:
            continue
        _, g = fnn.forward_with_grad(theta, x)
        fd = np.empty(len(theta))
        for j in range(len(theta)):
            up, dn = theta.copy(), theta.copy()
            up.data[j] += step
            dn.data[j] -= step
            fd[j] = (fnn.forward(up, x) - fnn.forward(dn, x)) / (2 * step)
        worst = max(worst, _rel(g.data, fd))
        done += 1
    return _result(f"gradient_point_x{n}", worst, 1.0)


def check_batch_gradients(n=20, seed=1, step=1e-5):
    # the batch loss is O(100) here, so a 1e-6 step would drown in round-off
    # (eps * loss / step ~ 3e-8); 1e-5 keeps it near 3e-9 and the kink margin
    # below keeps the step from crossing a ReLU switch
    rng = np.random.default_rng(seed)
    inst = build_poisson(2, 3)
    worst, done = 0.0, 0
    while done < n:
        theta = fnn.init_params(Architecture(3, 3, 2), seed=rng)
        batch = sample_indices(rng, 4, 3, 2)
        rows = inst.oracle.rows(batch)
        if min_preactivation(theta, points_of(inst.grid, rows.cols)) < 1e-4:
            continue
        _, g = batch_loss_and_grad(inst.oracle, inst.grid, theta, batch, Plain())
        fd = np.empty(len(theta))
        for j in range(len(theta)):
            up, dn = theta.copy(), theta.copy()
            up.data[j] += step
            dn.data[j] -= step
            lu, _ = batch_loss_and_grad(inst.oracle, inst.grid, up, batch)
            ld, _ = batch_loss_and_grad(inst.oracle, inst.grid, dn, batch)
            fd[j] = (lu - ld) / (2 * step)
        worst = max(worst, _rel(g.data, fd))
        done += 1
    return _result(f"gradient_batch_x{n}", worst, 1.0)


def check_dense_solve():
    worst = 0.0
    for inst in (build_poisson(1, 3), build_poisson(2, 4), build_riesz(2, 5)):
        u = do.dense_solve(do.densify(inst.oracle))
        truth = inst.truth(points_of(inst.grid, all_indices(inst.grid.shape)))
        worst = max(worst, np.max(np.abs(u - truth)))
    return _result("dense_solve_recovers_truth", worst, 1e-10)


def check_matrix_free_residual():
    inst = build_poisson(2, 6)
    u = do.dense_solve(do.densify(inst.oracle))
    idx = all_indices(inst.grid.shape)
    rows = inst.oracle.rows(idx)
    flat = np.ravel_multi_index(tuple((rows.cols - 1).T), inst.grid.shape)
    Au = np.bincount(rows.row, weights=rows.vals * u[flat], minlength=idx.shape[0])
    return _result("matrix_free_residual_of_dense_solution",
                   np.max(np.abs(inst.oracle.rhs(idx, rows) - Au)), 1e-10)


def check_residual_bound():
    inst = build_poisson(2, 4)
    A = do.densify(inst.oracle).matrix
    inv_norm = 1.0 / np.linalg.svd(A, compute_uv=False).min()
    theta, _ = train(inst, Architecture(3, 10, 2),
                     TrainConfig(batch_size=16, max_iters=300, optimizer="adam", seed=0, eval_every=0))
    X = points_of(inst.grid, all_indices(inst.grid.shape))
    err = np.linalg.norm(fnn.batch_forward(theta, X) - inst.truth(X))
    bound = residual_error_bound(inv_norm, inst.grid.size, full_loss(theta, inst))
    return _result("residual_error_bound", err / bound, 1.0, ok=err < bound)


def check_pbn_colsums():
    T = do.pbn_transition(10, PBN_SHIFTS, PBN_VALUES)
    return _result("pbn_column_sums_d10", np.max(np.abs(T.sum(axis=0) - 1)), 1e-12)


def check_queueing_rank():
    A = do.densify(build_queueing(2, 8, s=[2, 4]).oracle).matrix
    nullity = A.shape[1] - np.linalg.matrix_rank(A)
    colsum = np.max(np.abs(A.sum(axis=0)))
    return _result("queueing_nullity_one_d2_N8", colsum, 1e-12, ok=nullity == 1 and colsum <= 1e-12)


def check_pbn_stationary():
    inst = build_pbn(10)
    A = do.densify(inst.oracle).matrix
    pi = do.stationary_distribution(do.pbn_transition(10, PBN_SHIFTS, PBN_VALUES))
    return _result("pbn_stationary_in_null_space", np.max(np.abs(A @ pi)), 1e-9)


CHECKS = [
    check_rows_poisson,
    check_rows_riesz,
    check_rows_queueing,
    check_rows_pbn,
    check_point_gradients,
    check_batch_gradients,
    check_dense_solve,
    check_matrix_free_residual,
    check_residual_bound,
    check_pbn_colsums,
    check_queueing_rank,
    check_pbn_stationary,
]


def run_checks(checks=None) -> list[dict]:
    """Run every check; an exception inside a check counts as a failure."""
    out = []
    for fn in checks or CHECKS:
        try:
            out.append(fn())
        except Exception as exc:  # a crash is a failed check, not an aborted suite
            out.append({"name": fn.__name__, "passed": False, "measured": None,
                        "tolerance": None, "error": f"{type(exc).__name__}: {exc}"})
    return out
