"""Matrix-free row oracles.

An oracle answers two questions about a linear system ``A u = b`` whose
rows are labelled by 1-based multi-indices: which nonzeros sit in row
``k`` and what is ``b_k``. Nothing of size ``N**d`` is ever stored.

The hot path is :meth:`RowOracle.rows`, which takes a ``(K, d)`` batch of
row indices and returns all their nonzeros in coordinate form
(:class:`BatchRows`). :meth:`RowOracle.row` is the single-row view.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .grid import GridSpec, check_index, flat_keys, points_of

__all__ = [
    "BatchRows",
    "SparseRow",
    "RowOracle",
    "PoissonFactor",
    "RieszFactor",
    "QueueingFactor",
    "poisson_factor",
    "riesz_factor",
    "riesz_coefficients",
    "queueing_A_factor",
    "queueing_mu",
    "KronSumOracle",
    "kron_sum_row",
    "QueueingOracle",
    "queueing_R_row",
    "PBNOracle",
    "pbn_row",
    "DenseAdapter",
    "dense_adapter",
    "ManufacturedRhs",
    "manufactured_rhs",
]


@dataclass
class BatchRows:
    """Nonzeros of a batch of rows: entry ``e`` sits in batch row ``row[e]``,
    at column multi-index ``cols[e]`` with value ``vals[e]``."""

    row: np.ndarray
    cols: np.ndarray
    vals: np.ndarray
    n_rows: int

    @property
    def nnz(self) -> int:
        return self.vals.size

    def select(self, r: int) -> "SparseRow":
        mask = self.row == r
        return SparseRow(self.cols[mask], self.vals[mask])


@dataclass
class SparseRow:
    cols: np.ndarray
    vals: np.ndarray

    def __len__(self) -> int:
        return self.vals.size

    def as_dict(self) -> dict[tuple[int, ...], float]:
        return {tuple(int(i) for i in c): float(v) for c, v in zip(self.cols, self.vals)}


class RowOracle:
    """Base class. Subclasses implement ``_rows`` on validated ``(K, d)`` input."""

    def __init__(self, shape: Sequence[int], nnz_per_row_bound: int, rhs=None):
        self.shape = tuple(int(n) for n in shape)
        self.nnz_per_row_bound = int(nnz_per_row_bound)
        self.rhs_source = rhs

    @property
    def d(self) -> int:
        return len(self.shape)

    @property
    def N(self) -> int:
        return self.shape[0]

    @property
    def size(self) -> int:
        out = 1
        for n in self.shape:
            out *= n
        return out

    def rows(self, idx, check: bool = True) -> BatchRows:
        if check:
            idx = check_index(idx, self.shape)
        return self._rows(np.asarray(idx, dtype=np.int64))

    def _rows(self, idx: np.ndarray) -> BatchRows:
        raise NotImplementedError

    def rhs(self, idx, rows: BatchRows | None = None) -> np.ndarray:
        """``b_k`` for each row in the batch; zero for homogeneous systems."""
        idx = check_index(idx, self.shape)
        if self.rhs_source is None:
            return np.zeros(idx.shape[0])
        return self.rhs_source(self, idx, rows)

    def row(self, k) -> SparseRow:
        return self.rows(np.asarray(k, dtype=np.int64)[None, :]).select(0)

    def rhs_at(self, k) -> float:
        return float(self.rhs(np.asarray(k, dtype=np.int64)[None, :])[0])


# -- one-dimensional factors -------------------------------------------------
#
# A factor is a 1-D N x N matrix given by ``row_block(i)``: for a vector of
# 1-based row numbers it returns ``(cols, vals)`` of shape (K, W). Slots that
# fall outside the matrix carry value 0 and are dropped by the assembler.


class PoissonFactor:
    """Tridiagonal ``-2/h^2`` on the diagonal, ``1/h^2`` next to it."""

    width = 3

    def __init__(self, N: int, h: float):
        if N < 1 or not h > 0:
            raise ValueError(f"need N >= 1 and h > 0, got N={N}, h={h}")
        self.N = int(N)
        self.h = float(h)
        self.diag = -2 / h**2
        self.off = 1 / h**2

    def row_block(self, i: np.ndarray):
        i = np.asarray(i, dtype=np.int64)
        cols = np.stack([i - 1, i, i + 1], axis=1)
        vals = np.empty(cols.shape)
        vals[:, 0] = np.where(i > 1, self.off, 0.0)
        vals[:, 1] = self.diag
        vals[:, 2] = np.where(i < self.N, self.off, 0.0)
        return cols, vals


def poisson_factor(N: int, h: float) -> PoissonFactor:
    return PoissonFactor(N, h)


def riesz_coefficients(N: int, h: float, alpha: float, c: float) -> np.ndarray:
    """``t_0 .. t_N``: ``t_0 = c / (2 cos(alpha pi/2) h^alpha)``, ``t_i = (1 - (alpha+1)/i) t_{i-1}``."""
    if not 1 < alpha < 2:
        raise ValueError(f"alpha must lie in (1, 2), got {alpha}")
    if not c > 0:
        raise ValueError(f"c must be positive, got {c}")
    t = np.empty(N + 1)
    t[0] = c / (2 * np.cos(alpha * np.pi / 2) * h**alpha)
    for i in range(1, N + 1):
        t[i] = (1 - (alpha + 1) / i) * t[i - 1]
    return t


class RieszFactor:
    """Dense symmetric Toeplitz factor of the fractional diffusion operator.

    The entry at distance ``m = |i - j|`` is ``2 t_1`` for ``m = 0``,
    ``t_0 + t_2`` for ``m = 1`` and ``t_{m+1}`` beyond.
    """

    def __init__(self, N: int, h: float, alpha: float, c: float):
        if N < 1 or not h > 0:
            raise ValueError(f"need N >= 1 and h > 0, got N={N}, h={h}")
        self.N = int(N)
        self.width = self.N
        self.t = riesz_coefficients(self.N, h, alpha, c)
        by_offset = np.empty(self.N)
        by_offset[0] = 2 * self.t[1]
        if self.N > 1:
            by_offset[1] = self.t[0] + self.t[2]
        by_offset[2:] = self.t[3:self.N + 1]
        self.by_offset = by_offset

    def row_block(self, i: np.ndarray):
        i = np.asarray(i, dtype=np.int64)
        cols = np.broadcast_to(np.arange(1, self.N + 1, dtype=np.int64), (i.size, self.N))
        vals = self.by_offset[np.abs(cols - i[:, None])]
        return cols, vals


def riesz_factor(N: int, h: float, alpha: float, c: float) -> RieszFactor:
    return RieszFactor(N, h, alpha, c)


def queueing_mu(N: int, lam: float, s: int, alpha: float) -> float:
    """Service rate ``mu = (lam + (N-1)**-alpha) / s``."""
    return (lam + (N - 1) ** (-alpha)) / s


class QueueingFactor:
    """Tridiagonal generator of one finite queue with ``s`` servers.

    Row ``i``: ``-lam`` at ``i-1``; ``lam + min(i-1, s) mu`` on the diagonal
    (``s mu`` in the last row); ``-min(i, s) mu`` at ``i+1``.
    """

    width = 3

    def __init__(self, N: int, lam: float, s: int, mu: float):
        if N < 2 or s < 1:
            raise ValueError(f"need N >= 2 and s >= 1, got N={N}, s={s}")
        if not lam > 0 or not mu > 0:
            raise ValueError("rates must be positive")
        self.N, self.lam, self.s, self.mu = int(N), float(lam), int(s), float(mu)

    def row_block(self, i: np.ndarray):
        i = np.asarray(i, dtype=np.int64)
        lam, s, mu = self.lam, self.s, self.mu
        cols = np.stack([i - 1, i, i + 1], axis=1)
        vals = np.empty(cols.shape)
        vals[:, 0] = np.where(i > 1, -lam, 0.0)
        vals[:, 1] = np.where(i < self.N, lam + np.minimum(i - 1, s) * mu, s * mu)
        vals[:, 2] = np.where(i < self.N, -(np.minimum(i, s) * mu), 0.0)
        return cols, vals


def queueing_A_factor(N: int, lam: float, s: int, mu: float) -> QueueingFactor:
    return QueueingFactor(N, lam, s, mu)


# -- Kronecker sums -------------------------------------------------------------


def _kron_sum_parts(factors, idx: np.ndarray):
    """Diagonal values ``(K,)`` and per-dimension off-diagonal pieces."""
    K = idx.shape[0]
    diag = np.zeros(K)
    pieces = []
    for n, f in enumerate(factors):
        cols, vals = f.row_block(idx[:, n])
        on_diag = cols == idx[:, n, None]
        diag += np.where(on_diag, vals, 0.0).sum(axis=1)
        r, w = np.nonzero(~on_diag & (vals != 0))
        pieces.append((n, r, cols[r, w], vals[r, w]))
    return diag, pieces


def _assemble(idx, diag, pieces) -> BatchRows:
    K = idx.shape[0]
    keep = np.nonzero(diag != 0)[0]
    rows = [keep]
    cols = [idx[keep]]
    vals = [diag[keep]]
    for n, r, c, v in pieces:
        block = idx[r].copy()
        block[:, n] = c
        rows.append(r)
        cols.append(block)
        vals.append(v)
    return BatchRows(
        row=np.concatenate(rows).astype(np.int64, copy=False),
        cols=np.concatenate(cols) if cols else np.zeros((0, idx.shape[1]), np.int64),
        vals=np.concatenate(vals),
        n_rows=K,
    )


class KronSumOracle(RowOracle):
    """Rows of ``sum_n I x ... x T_n x ... x I`` from one 1-D factor per dimension."""

    def __init__(self, factors: Sequence, rhs=None):
        factors = list(factors)
        if not factors:
            raise ValueError("need at least one factor")
        shape = [f.N for f in factors]
        bound = 1 + sum(min(f.width, f.N) - 1 for f in factors)
        super().__init__(shape, bound, rhs)
        self.factors = factors

    def _rows(self, idx):
        diag, pieces = _kron_sum_parts(self.factors, idx)
        return _assemble(idx, diag, pieces)


def kron_sum_row(factors: Sequence, k) -> SparseRow:
    return KronSumOracle(factors).row(k)


# -- overflow queueing ------------------------------------------------------------


class QueueingOracle(RowOracle):
    """Rows of ``A + R`` for ``d`` coupled overflow queues (homogeneous system).

    ``R = sum_{m != n} R_mn`` where ``R_mn`` has ``e_m e_m^T`` in dimension
    ``m``, ``R_m`` (``lam_m`` times lower bidiagonal, last diagonal entry 0)
    in dimension ``n`` and the identity elsewhere.
    """

    def __init__(self, N: int, lam: Sequence[float], s: Sequence[int], alpha: float, rhs=None):
        d = len(lam)
        if len(s) != d:
            raise ValueError("lam and s must have the same length")
        if d > N:
            raise ValueError(f"overflow term needs d <= N (e_m in R^N), got d={d}, N={N}")
        self.lam = [float(x) for x in lam]
        self.s = [int(x) for x in s]
        self.alpha = float(alpha)
        self.mu = [queueing_mu(N, l, si, alpha) for l, si in zip(self.lam, self.s)]
        self.factors = [QueueingFactor(N, l, si, m) for l, si, m in zip(self.lam, self.s, self.mu)]
        super().__init__([N] * d, 2 * d + 1 + d * (d - 1), rhs)

    def _r_parts(self, idx):
        """Diagonal and per-dimension sub-diagonal values of the ``R`` rows.

        Contributions are accumulated term by term in ``(m, n)`` order.
        """
        K, d = idx.shape
        N = self.N
        r_diag = np.zeros(K)
        r_sub = [np.zeros(K) for _ in range(d)]
        for m in range(d):
            hit = idx[:, m] == m + 1
            for n in range(d):
                if n == m:
                    continue
                i_n = idx[:, n]
                r_diag += np.where(hit & (i_n < N), self.lam[m], 0.0)
                r_sub[n] += np.where(hit & (i_n > 1), -self.lam[m], 0.0)
        return r_diag, r_sub

    def _rows(self, idx):
        diag, pieces = _kron_sum_parts(self.factors, idx)
        r_diag, r_sub = self._r_parts(idx)
        diag = diag + r_diag
        merged = []
        for n, r, c, v in pieces:
            sub = c == idx[r, n] - 1
            v = v.copy()
            v[sub] = v[sub] + r_sub[n][r[sub]]
            merged.append((n, r, c, v))
        return _assemble(idx, diag, merged)

    def r_row(self, k) -> SparseRow:
        """Row ``k`` of ``R`` alone."""
        idx = check_index(k, self.shape)
        r_diag, r_sub = self._r_parts(idx)
        pieces = []
        for n in range(self.d):
            r = np.nonzero(r_sub[n] != 0)[0]
            pieces.append((n, r, idx[r, n] - 1, r_sub[n][r]))
        return _assemble(idx, r_diag, pieces).select(0)


def queueing_R_row(N: int, lam: Sequence[float], s: Sequence[int], alpha: float, k) -> SparseRow:
    return QueueingOracle(N, lam, s, alpha).r_row(k)


# -- probabilistic Boolean network ------------------------------------------------

_LO_BITS = 62


class PBNOracle(RowOracle):
    """Rows of ``I - T`` where ``T`` is the column-normalized shift matrix
    ``t_ij = v_k`` for ``j = i + k``, ``k`` in the shift set.

    The ``2**d`` states are multi-indices in ``{1, 2}**d``; the flat state
    number is their lexicographic position. Flat numbers are carried as two
    int64 words so ``d`` up to 124 is handled without Python integers.
    """

    def __init__(self, d: int, shifts: Sequence[int], values: Sequence[float], rhs=None):
        if len(shifts) != len(values) or not shifts:
            raise ValueError("shifts and values must be nonempty and of equal length")
        if len(set(shifts)) != len(shifts):
            raise ValueError("shifts must be distinct")
        if any(not v > 0 for v in values):
            raise ValueError("shift values must be positive")
        if any(abs(int(k)) >= 2**d for k in shifts):
            raise ValueError(f"shift magnitude must be < 2**d = {2**d}")
        if d > 2 * _LO_BITS:
            raise ValueError(f"d > {2 * _LO_BITS} not supported")
        self.shifts = [int(k) for k in shifts]
        self.values = [float(v) for v in values]
        self._w = min(d, _LO_BITS)
        self._pow_lo = (1 << np.arange(self._w - 1, -1, -1, dtype=np.int64)).astype(np.int64)
        self._pow_hi = (1 << np.arange(d - self._w - 1, -1, -1, dtype=np.int64)).astype(np.int64)
        super().__init__([2] * d, len(shifts) + 1, rhs)
        # a column without entries can only be the first, the last, or the one at
        # the smallest positive shift
        candidates = {1, 2**d} | {min([k for k in self.shifts if k > 0], default=1)}
        for j in sorted(candidates):
            if self._colsum_flat0(j - 1) == 0:
                raise ValueError(f"column {j} has no entries; matrix is not stochastic")

    def _split(self, idx):
        bits = idx - 1
        w = self._w
        lo = bits[:, -w:] @ self._pow_lo
        hi = bits[:, :-w] @ self._pow_hi if self.d > w else np.zeros(idx.shape[0], np.int64)
        return hi, lo

    def _join(self, hi, lo):
        d, w = self.d, self._w
        out = np.empty((hi.size, d), dtype=np.int64)
        out[:, -w:] = (lo[:, None] >> np.arange(w - 1, -1, -1)) & 1
        if d > w:
            out[:, :-w] = (hi[:, None] >> np.arange(d - w - 1, -1, -1)) & 1
        return out + 1

    def _shift(self, hi, lo, k):
        """Add ``k`` to the 0-based flat number; also return the in-range mask."""
        w = self._w
        lo = lo + k
        carry = lo >> w
        lo = lo & ((1 << w) - 1)
        hi = hi + carry
        valid = (hi >= 0) & (hi < (1 << (self.d - w)))
        return hi, lo, valid

    def _colsum(self, hi, lo):
        total = np.zeros(hi.size)
        for k, v in zip(self.shifts, self.values):
            _, _, valid = self._shift(hi, lo, -k)
            total += np.where(valid, v, 0.0)
        return total

    def _colsum_flat0(self, j0: int) -> float:
        total = 0.0
        for k, v in zip(self.shifts, self.values):
            if 0 <= j0 - k < 2**self.d:
                total += v
        return total

    def _rows(self, idx):
        K = idx.shape[0]
        hi, lo = self._split(idx)
        rows = [np.arange(K)]
        cols = [idx]
        vals = [np.ones(K)]
        for k, v in zip(self.shifts, self.values):
            chi, clo, valid = self._shift(hi, lo, k)
            r = np.nonzero(valid)[0]
            chi, clo = chi[r], clo[r]
            colsum = self._colsum(chi, clo)
            rows.append(r)
            cols.append(self._join(chi, clo))
            vals.append(-(v / colsum))
        return BatchRows(np.concatenate(rows), np.concatenate(cols), np.concatenate(vals), K)

    def transition_entries(self, j) -> SparseRow:
        """Column ``j`` of ``T`` (rows and probabilities)."""
        idx = check_index(j, self.shape)
        hi, lo = self._split(idx)
        colsum = self._colsum(hi, lo)
        out_rows, out_vals = [], []
        for k, v in zip(self.shifts, self.values):
            rhi, rlo, valid = self._shift(hi, lo, -k)
            if valid[0]:
                out_rows.append(self._join(rhi, rlo)[0])
                out_vals.append(v / colsum[0])
        return SparseRow(np.array(out_rows, dtype=np.int64).reshape(-1, self.d), np.array(out_vals))


def pbn_row(d: int, shifts: Sequence[int], values: Sequence[float], k) -> SparseRow:
    return PBNOracle(d, shifts, values).row(k)


# -- dense adapter ------------------------------------------------------------------

DENSE_LIMIT = 2**16


class DenseAdapter(RowOracle):
    """Row oracle over an explicitly stored small matrix (rows in lexicographic order)."""

    def __init__(self, matrix, N: int, d: int, rhs_vector=None):
        A = np.asarray(matrix, dtype=np.float64)
        n = N**d
        if n > DENSE_LIMIT:
            raise ValueError(f"dense adapter limited to {DENSE_LIMIT} rows, got {n}")
        if A.shape != (n, n):
            raise ValueError(f"matrix must be {n} x {n}, got {A.shape}")
        self.matrix = A
        self.rhs_vector = None if rhs_vector is None else np.asarray(rhs_vector, dtype=np.float64)
        super().__init__([N] * d, int(max(1, np.count_nonzero(A, axis=1).max(initial=0))),
                         None if rhs_vector is None else _dense_rhs)
        self._digits = np.stack(np.unravel_index(np.arange(n), (N,) * d), axis=1).astype(np.int64) + 1

    def _rows(self, idx):
        keys = flat_keys(idx, self.N)
        r, c = np.nonzero(self.matrix[keys])
        return BatchRows(r.astype(np.int64), self._digits[c], self.matrix[keys[r], c], idx.shape[0])


def _dense_rhs(oracle: DenseAdapter, idx, rows):
    return oracle.rhs_vector[flat_keys(idx, oracle.N)]


def dense_adapter(matrix, N: int, d: int, rhs_vector=None) -> DenseAdapter:
    return DenseAdapter(matrix, N, d, rhs_vector)


# -- manufactured right-hand sides --------------------------------------------------


class ManufacturedRhs:
    """``b_k = sum_j A_kj v(x_j)`` evaluated on demand from the row nonzeros."""

    def __init__(self, grid: GridSpec, truth: Callable[[np.ndarray], np.ndarray]):
        self.grid = grid
        self.truth = truth

    def __call__(self, oracle: RowOracle, idx, rows: BatchRows | None = None):
        if rows is None:
            rows = oracle.rows(idx, check=False)
        v = self.truth(points_of(self.grid, rows.cols, check=False))
        return np.bincount(rows.row, weights=rows.vals * v, minlength=rows.n_rows)


def manufactured_rhs(op: RowOracle, v: Callable, grid: GridSpec, k) -> float:
    """Single entry of ``A v`` for the grid function ``v``."""
    return float(ManufacturedRhs(grid, v)(op, check_index(k, op.shape))[0])
