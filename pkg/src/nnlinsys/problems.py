"""Experiment definitions: grid + row oracle + loss + (optional) manufactured truth."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .grid import GridSpec, make_endpoint_uniform_grid, make_explicit_grid, make_interior_uniform_grid
from .operators import (
    KronSumOracle,
    ManufacturedRhs,
    PBNOracle,
    PoissonFactor,
    QueueingOracle,
    RieszFactor,
    RowOracle,
)
from .solver import LossSpec, MeanPenalty, PinComponent, Plain

__all__ = [
    "ProblemInstance",
    "poisson_truth",
    "riesz_truth",
    "build_poisson",
    "build_riesz",
    "build_queueing",
    "build_pbn",
    "PBN_SHIFTS",
    "PBN_VALUES",
]

PBN_SHIFTS = (-13, -5, 2, 6)
PBN_VALUES = (1.0, 4.0, 3.0, 2.0)


@dataclass
class ProblemInstance:
    grid: GridSpec
    oracle: RowOracle
    loss: LossSpec
    truth: Callable[[np.ndarray], np.ndarray] | None
    label: str
    # batch size and iteration budget used for the reference runs
    defaults: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.oracle.shape != self.grid.shape:
            raise ValueError(f"oracle shape {self.oracle.shape} != grid shape {self.grid.shape}")

    @property
    def d(self) -> int:
        return self.grid.d

    @property
    def N(self) -> int:
        return self.grid.N


def poisson_truth(x: np.ndarray) -> np.ndarray:
    """``prod_i sin(pi x_i)`` for points given as rows of ``x``."""
    return np.prod(np.sin(np.pi * np.atleast_2d(x)), axis=1)


def riesz_truth(x: np.ndarray) -> np.ndarray:
    """``sin(sum_i x_i)``."""
    return np.sin(np.atleast_2d(x).sum(axis=1))


def build_poisson(d: int, N: int) -> ProblemInstance:
    """Second-order finite differences for the Laplacian on ``[-1, 1]^d`` with a
    manufactured right-hand side ``b = A v``."""
    grid = make_interior_uniform_grid(d, N, -1.0, 1.0)
    h = 2.0 / (N + 1)
    factor = PoissonFactor(N, h)
    oracle = KronSumOracle([factor] * d, rhs=ManufacturedRhs(grid, poisson_truth))
    return ProblemInstance(grid, oracle, Plain(), poisson_truth, f"poisson d={d} N={N}",
                           dict(batch_size=10_000, max_iters=50_000))


def _broadcast(values, d: int, name: str) -> list[float]:
    if np.isscalar(values):
        return [float(values)] * d
    values = [float(v) for v in values]
    if len(values) != d:
        raise ValueError(f"{name} needs {d} entries, got {len(values)}")
    return values


def build_riesz(d: int, N: int, c: Sequence[float] | float = 1.0,
                alpha: Sequence[float] | float = 1.5) -> ProblemInstance:
    """Riesz fractional diffusion on ``[-1, 1]^d``; truth ``sin(sum x_n)``."""
    c = _broadcast(c, d, "c")
    alpha = _broadcast(alpha, d, "alpha")
    grid = make_interior_uniform_grid(d, N, -1.0, 1.0)
    h = 2.0 / (N + 1)
    factors = [RieszFactor(N, h, a, cn) for cn, a in zip(c, alpha)]
    oracle = KronSumOracle(factors, rhs=ManufacturedRhs(grid, riesz_truth))
    return ProblemInstance(grid, oracle, Plain(), riesz_truth, f"riesz d={d} N={N}",
                           dict(batch_size=20_000, max_iters=20_000))


def build_queueing(d: int, N: int = 100, alpha: float = 1.0,
                   lam: Sequence[float] | float = 0.01, s: Sequence[int] | None = None,
                   eps: float = 1.0) -> ProblemInstance:
    """Overflow queueing steady state ``(A + R) u = 0`` with ``u_(1,...,1)`` pinned to 1.

    ``s`` defaults to ``8n`` servers for queue ``n``.
    """
    lam = _broadcast(lam, d, "lam")
    if s is None:
        s = [8 * n for n in range(1, d + 1)]
    s = [int(x) for x in s]
    if len(s) != d:
        raise ValueError(f"s needs {d} entries, got {len(s)}")
    if d > N:
        raise ValueError(f"queueing model needs d <= N, got d={d}, N={N}")
    grid = make_endpoint_uniform_grid(d, N, 0.0, 1.0)
    oracle = QueueingOracle(N, lam, s, alpha)
    loss = PinComponent((1,) * d, eps)
    return ProblemInstance(grid, oracle, loss, None, f"queueing d={d} N={N}",
                           dict(batch_size=20_000, max_iters=20_000))


def build_pbn(d: int, shifts: Sequence[int] = PBN_SHIFTS, values: Sequence[float] = PBN_VALUES,
              eps: float = 1.0) -> ProblemInstance:
    """Steady state of a shift-structured probabilistic Boolean network,
    ``(I - T) u = 0`` with the batch mean of ``u`` pushed to 1.

    Requires ``d >= 5`` so the default shifts fit well inside the state space.
    """
    if d < 5:
        raise ValueError(f"PBN model needs d >= 5, got d={d}")
    grid = make_explicit_grid(d, [[1 / 3, 2 / 3]])
    oracle = PBNOracle(d, shifts, values)
    return ProblemInstance(grid, oracle, MeanPenalty(eps), None, f"pbn d={d}",
                           dict(batch_size=20_000, max_iters=20_000))
