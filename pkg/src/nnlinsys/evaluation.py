"""Test-set metrics, the residual-based error bound, and solution slices."""
from __future__ import annotations

import itertools
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import fnn
from .fnn import NetworkParams
from .grid import GridSpec, check_index, points_of, sample_indices

__all__ = [
    "TestSet",
    "make_test_set",
    "all_indices",
    "error_inf",
    "error_l2",
    "residual_l2",
    "residual_error_bound",
    "full_loss",
    "EvalReport",
    "evaluate",
    "slice_2d",
    "argmax_scan",
]

_CHUNK = 4096


@dataclass
class TestSet:
    indices: np.ndarray
    seed: int | None = None

    __test__ = False  # not a pytest class

    def __len__(self):
        return self.indices.shape[0]


def all_indices(shape) -> np.ndarray:
    """Every multi-index of the grid in lexicographic order, ``(prod(shape), d)``."""
    grids = np.meshgrid(*[np.arange(1, n + 1) for n in shape], indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=1).astype(np.int64)


def make_test_set(instance, n_test: int = 10_000, seed: int = 2023) -> TestSet:
    """Uniform sample of ``n_test`` grid indices; the full index set when the
    grid has fewer than ``n_test`` points."""
    grid = instance.grid
    if grid.size < n_test:
        return TestSet(all_indices(grid.shape), seed)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x7E57]))
    return TestSet(sample_indices(rng, n_test, grid.N, grid.d), seed)


def _need_truth(instance):
    if instance.truth is None:
        raise ValueError(f"{instance.label}: no true solution attached")


def _errors(theta, instance, T: TestSet) -> np.ndarray:
    _need_truth(instance)
    X = points_of(instance.grid, T.indices)
    return instance.truth(X) - fnn.batch_forward(theta, X)


def error_inf(theta: NetworkParams, instance, T: TestSet) -> float:
    """``max_T |u_true - phi|``."""
    return float(np.max(np.abs(_errors(theta, instance, T))))


def error_l2(theta: NetworkParams, instance, T: TestSet) -> float:
    """Root mean square of ``u_true - phi`` over the test indices."""
    e = _errors(theta, instance, T)
    return float(np.sqrt(np.mean(e * e)))


def _residuals(theta, op, grid, idx) -> np.ndarray:
    out = []
    for s in range(0, idx.shape[0], _CHUNK):
        part = idx[s:s + _CHUNK]
        rows = op.rows(part)
        phi = fnn.batch_forward(theta, points_of(grid, rows.cols, check=False))
        Aphi = np.bincount(rows.row, weights=rows.vals * phi, minlength=part.shape[0])
        out.append(op.rhs(part, rows) - Aphi)
    return np.concatenate(out) if out else np.zeros(0)


def residual_l2(theta: NetworkParams, instance, T: TestSet) -> float:
    """Root mean square of ``b_k - a_k^T Phi`` over the test rows."""
    r = _residuals(theta, instance.oracle, instance.grid, T.indices)
    return float(np.sqrt(np.mean(r * r)))


def full_loss(theta: NetworkParams, instance, limit: int = 2**20) -> float:
    """Un-batched mean squared residual over every row (small grids only)."""
    if instance.grid.size > limit:
        raise ValueError(f"full loss over {instance.grid.size} rows exceeds limit {limit}")
    r = _residuals(theta, instance.oracle, instance.grid, all_indices(instance.grid.shape))
    return float(np.mean(r * r))


def residual_error_bound(inv_norm: float, system_size: float, full_loss: float) -> float:
    """``||A^-1||_2 * sqrt(n * L)``, an upper bound on ``||Phi - u||_2``."""
    if inv_norm < 0 or system_size < 0 or full_loss < 0:
        raise ValueError("inputs must be nonnegative")
    return inv_norm * np.sqrt(system_size * full_loss)


@dataclass
class EvalReport:
    label: str
    n_test: int
    res_l2: float
    e_inf: float | None = None
    e_l2: float | None = None
    architecture: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        return cls(**json.loads(text))


def evaluate(theta: NetworkParams, instance, T: TestSet, config: dict | None = None) -> EvalReport:
    a = theta.arch
    rep = EvalReport(
        label=instance.label,
        n_test=len(T),
        res_l2=residual_l2(theta, instance, T),
        architecture=dict(L=a.L, M=a.M, d=a.d),
        config=dict(config or {}),
    )
    if instance.truth is not None:
        rep.e_inf = error_inf(theta, instance, T)
        rep.e_l2 = error_l2(theta, instance, T)
    return rep


def slice_2d(theta: NetworkParams, grid: GridSpec, fixed, free_dims: tuple[int, int]) -> np.ndarray:
    """``phi`` on the plane through ``fixed`` spanned by two grid axes.

    ``free_dims`` are 0-based axis numbers ``(p, q)``; entry ``[i, j]`` has
    index ``i + 1`` along ``p`` and ``j + 1`` along ``q``.
    """
    p, q = free_dims
    base = check_index(fixed, grid.shape)[0]
    if p == q or not (0 <= p < grid.d and 0 <= q < grid.d):
        raise IndexError(f"invalid free dimensions {free_dims} for d={grid.d}")
    Np, Nq = grid.shape[p], grid.shape[q]
    idx = np.tile(base, (Np * Nq, 1))
    ii, jj = np.meshgrid(np.arange(1, Np + 1), np.arange(1, Nq + 1), indexing="ij")
    idx[:, p] = ii.ravel()
    idx[:, q] = jj.ravel()
    return fnn.batch_forward(theta, points_of(grid, idx, check=False)).reshape(Np, Nq)


def _best(theta, grid, idx):
    vals = fnn.batch_forward(theta, points_of(grid, idx, check=False))
    j = int(np.argmax(vals))
    return idx[j].copy(), float(vals[j])


def argmax_scan(theta: NetworkParams, grid: GridSpec, strategy: str = "auto",
                n_samples: int = 10_000, seed: int = 0,
                exhaustive_limit: int = 2**20) -> tuple[tuple[int, ...], float]:
    """Grid index where ``phi`` is largest.

    ``"exhaustive"`` scans every point (only allowed up to ``exhaustive_limit``);
    ``"sampled"`` takes the best of ``n_samples`` uniform draws and refines it
    by coordinate ascent, moving along one axis at a time while that improves.
    ``"auto"`` picks exhaustive whenever the grid is small enough.
    """
    if strategy == "auto":
        strategy = "exhaustive" if grid.size <= exhaustive_limit else "sampled"
    if strategy == "exhaustive":
        if grid.size > exhaustive_limit:
            raise ValueError("grid too large for exhaustive scan")
        best_idx, best_val = None, -np.inf
        ranges = [range(1, n + 1) for n in grid.shape]
        it = itertools.product(*ranges)
        while True:
            block = np.array(list(itertools.islice(it, 1 << 16)), dtype=np.int64)
            if block.size == 0:
                break
            idx, val = _best(theta, grid, block)
            if val > best_val:
                best_idx, best_val = idx, val
        return tuple(int(i) for i in best_idx), best_val
    if strategy != "sampled":
        raise ValueError(f"unknown strategy {strategy!r}")

    rng = np.random.default_rng(seed)
    cur, cur_val = _best(theta, grid, sample_indices(rng, n_samples, grid.N, grid.d))
    improved = True
    while improved:
        improved = False
        for k in range(grid.d):
            line = np.tile(cur, (grid.shape[k], 1))
            line[:, k] = np.arange(1, grid.shape[k] + 1)
            idx, val = _best(theta, grid, line)
            if val > cur_val:
                cur, cur_val = idx, val
                improved = True
    return tuple(int(i) for i in cur), cur_val
