"""Brute-force dense references for small instances.

The matrix builders here follow the defining formulas directly with explicit
loops and ``np.kron``; they share no code with :mod:`nnlinsys.operators`, so
comparing the two is a genuine cross-check.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .evaluation import all_indices
from .grid import zeta
from .operators import RowOracle

__all__ = [
    "DENSE_LIMIT",
    "DenseSystem",
    "densify",
    "dense_solve",
    "dense_nullvec",
    "stationary_distribution",
    "kron_sum_dense",
    "poisson_T",
    "riesz_T",
    "queueing_T",
    "queueing_R_dense",
    "poisson_matrix",
    "riesz_matrix",
    "queueing_matrix",
    "pbn_transition",
    "pbn_matrix",
]

DENSE_LIMIT = 2**16


@dataclass
class DenseSystem:
    matrix: np.ndarray
    rhs: np.ndarray

    def __post_init__(self):
        n = self.matrix.shape[0]
        if n > DENSE_LIMIT:
            raise ValueError(f"dense system of size {n} exceeds {DENSE_LIMIT}")
        if self.matrix.shape != (n, n) or self.rhs.shape != (n,):
            raise ValueError("inconsistent dense system shapes")


def densify(op: RowOracle) -> DenseSystem:
    """Materialize ``A`` and ``b`` from a row oracle, rows in lexicographic order."""
    n = op.size
    if n > DENSE_LIMIT:
        raise ValueError(f"system size {n} exceeds dense limit {DENSE_LIMIT}")
    idx = all_indices(op.shape)
    rows = op.rows(idx)
    A = np.zeros((n, n))
    col_flat = np.ravel_multi_index(tuple((rows.cols - 1).T), op.shape)
    # rows carry distinct columns, so plain assignment is exact
    A[rows.row, col_flat] = rows.vals
    return DenseSystem(A, op.rhs(idx, rows))


def dense_solve(sys: DenseSystem) -> np.ndarray:
    """LU with partial pivoting; refuses matrices singular to working precision."""
    A, b = sys.matrix, sys.rhs
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("error", scipy.linalg.LinAlgWarning)
            x = scipy.linalg.solve(A, b)
    except (scipy.linalg.LinAlgError, scipy.linalg.LinAlgWarning) as exc:
        raise np.linalg.LinAlgError(f"matrix is singular to working precision: {exc}") from None
    resid = np.max(np.abs(A @ x - b), initial=0.0)
    if resid > 1e-8 * (1 + np.max(np.abs(b), initial=0.0)):
        raise np.linalg.LinAlgError(f"solve residual {resid:.3e} too large")
    return x


def dense_nullvec(matrix) -> np.ndarray:
    """Unit null vector of a matrix with exactly one-dimensional numerical null space.

    The sign is chosen so the first entry that is not negligible is positive.
    """
    A = np.asarray(matrix, dtype=np.float64)
    _, svals, vt = np.linalg.svd(A)
    tol = max(A.shape) * np.finfo(float).eps * svals[0]
    rank = int(np.sum(svals > tol))
    if A.shape[1] - rank != 1:
        raise np.linalg.LinAlgError(f"expected nullity 1, numerical rank is {rank} of {A.shape[1]}")
    v = vt[-1].copy()
    lead = np.nonzero(np.abs(v) > 1e-12 * np.abs(v).max())[0][0]
    if v[lead] < 0:
        v = -v
    if np.linalg.norm(A @ v) > 1e-8 * np.linalg.norm(A):
        raise np.linalg.LinAlgError("null vector residual too large")
    return v


def stationary_distribution(T, tol: float = 1e-12, max_iter: int = 1_000_000) -> np.ndarray:
    """Power iteration ``u <- T u / ||T u||_1`` from the uniform vector.

    ``T`` is column-stochastic (dense or scipy sparse). The result is scaled
    to mean 1.
    """
    T = sp.csr_matrix(T) if sp.issparse(T) else np.asarray(T, dtype=np.float64)
    n = T.shape[0]
    colsum = np.asarray(T.sum(axis=0)).ravel()
    if np.max(np.abs(colsum - 1)) > 1e-10:
        raise ValueError("matrix is not column-stochastic")
    u = np.full(n, 1.0 / n)
    for _ in range(max_iter):
        w = T @ u
        w /= np.abs(w).sum()
        if np.abs(w - u).sum() <= tol:
            return w * n
        u = w
    raise RuntimeError(f"power iteration did not converge in {max_iter} steps")


# -- dense matrices from the defining formulas ------------------------------------------


def kron_sum_dense(Ts) -> np.ndarray:
    Ns = [T.shape[0] for T in Ts]
    n = int(np.prod(Ns))
    A = np.zeros((n, n))
    for k, T in enumerate(Ts):
        term = np.ones((1, 1))
        for j, Nj in enumerate(Ns):
            term = np.kron(term, T if j == k else np.eye(Nj))
        A += term
    return A


def poisson_T(N: int) -> np.ndarray:
    h = 2.0 / (N + 1)
    T = np.zeros((N, N))
    for i in range(N):
        for j in range(N):
            if i == j:
                T[i, j] = -2 / h**2
            elif abs(i - j) == 1:
                T[i, j] = 1 / h**2
    return T


def riesz_T(N: int, alpha: float, c: float) -> np.ndarray:
    h = 2.0 / (N + 1)
    t = [c / (2 * np.cos(alpha * np.pi / 2) * h**alpha)]
    for i in range(1, N + 1):
        t.append((1 - (alpha + 1) / i) * t[i - 1])
    first = [2 * t[1]] + ([t[0] + t[2]] if N > 1 else []) + t[3:N + 1]
    return scipy.linalg.toeplitz(first)


def queueing_T(N: int, lam: float, s: int, alpha: float) -> np.ndarray:
    mu = (lam + (N - 1) ** (-alpha)) / s
    T = np.zeros((N, N))
    for r in range(1, N + 1):
        if r > 1:
            T[r - 1, r - 2] = -lam
        T[r - 1, r - 1] = lam + min(r - 1, s) * mu if r < N else s * mu
        if r < N:
            T[r - 1, r] = -(min(r, s) * mu)
    return T


def queueing_R_dense(N: int, lam) -> np.ndarray:
    d = len(lam)
    n = N**d
    R = np.zeros((n, n))
    for m in range(d):
        e = np.zeros((N, 1))
        e[m] = 1.0
        Rm = np.eye(N) - np.eye(N, k=-1)
        Rm[N - 1, N - 1] = 0.0
        Rm = lam[m] * Rm
        for n_ in range(d):
            if n_ == m:
                continue
            term = np.ones((1, 1))
            for k in range(d):
                if k == m:
                    f = e @ e.T
                elif k == n_:
                    f = Rm
                else:
                    f = np.eye(N)
                term = np.kron(term, f)
            R += term
    return R


def poisson_matrix(d: int, N: int) -> np.ndarray:
    return kron_sum_dense([poisson_T(N)] * d)


def riesz_matrix(d: int, N: int, c=1.0, alpha=1.5) -> np.ndarray:
    c = [c] * d if np.isscalar(c) else list(c)
    alpha = [alpha] * d if np.isscalar(alpha) else list(alpha)
    return kron_sum_dense([riesz_T(N, a, cn) for cn, a in zip(c, alpha)])


def queueing_matrix(d: int, N: int, alpha: float, lam, s) -> np.ndarray:
    A = kron_sum_dense([queueing_T(N, l, si, alpha) for l, si in zip(lam, s)])
    return A + queueing_R_dense(N, lam)


def pbn_transition(d: int, shifts, values) -> np.ndarray:
    """Column-normalized ``t_ij = v_k`` for ``j = i + k``."""
    n = 2**d
    Tt = np.zeros((n, n))
    for k, v in zip(shifts, values):
        for i in range(n):
            j = i + k
            if 0 <= j < n:
                Tt[i, j] = v
    return Tt / Tt.sum(axis=0)


def pbn_matrix(d: int, shifts, values) -> np.ndarray:
    return np.eye(2**d) - pbn_transition(d, shifts, values)


def lex_position(idx, N: int) -> int:
    """0-based row of a multi-index in the dense matrices above."""
    return zeta(idx, N, len(idx)) - 1
