"""Cartesian tensor grids and lexicographic index arithmetic.

Multi-indices are 1-based. A single multi-index is a length-``d`` integer
sequence; batches are ``(K, d)`` int64 arrays. Flat (lexicographic) indices
are plain Python integers, so positions beyond the 64-bit range (``10**24``,
``2**100``) are exact.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

__all__ = [
    "GridSpec",
    "make_interior_uniform_grid",
    "make_endpoint_uniform_grid",
    "make_explicit_grid",
    "zeta",
    "unzeta",
    "check_index",
    "point_of",
    "points_of",
    "sample_indices",
    "flat_keys",
]


@dataclass(frozen=True)
class GridSpec:
    """Tensor grid with the same coordinate list in every dimension.

    ``coords`` holds one strictly increasing array per dimension; ``lo`` and
    ``hi`` are the box bounds.
    """

    coords: tuple[np.ndarray, ...]
    lo: float
    hi: float

    def __post_init__(self):
        if len(self.coords) < 1:
            raise ValueError("grid dimension must be >= 1")
        for c in self.coords:
            if c.ndim != 1 or c.size < 1:
                raise ValueError("each coordinate list must be a nonempty 1-D array")
            if c.size > 1 and not np.all(np.diff(c) > 0):
                raise ValueError("coordinates must be strictly increasing")
            if c[0] < self.lo or c[-1] > self.hi:
                raise ValueError("coordinates must lie within the domain bounds")

    @property
    def d(self) -> int:
        return len(self.coords)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(c.size for c in self.coords)

    @property
    def N(self) -> int:
        """Points per dimension (grids here are always N x ... x N)."""
        sizes = set(self.shape)
        if len(sizes) != 1:
            raise ValueError("grid is not uniform in size across dimensions")
        return sizes.pop()

    @property
    def size(self) -> int:
        """Total number of grid points as an exact integer."""
        out = 1
        for n in self.shape:
            out *= n
        return out


def _coords_array(values) -> np.ndarray:
    arr = np.array(values, dtype=np.float64)
    arr.setflags(write=False)
    return arr


def make_interior_uniform_grid(d: int, N: int, lo: float, hi: float) -> GridSpec:
    """Uniform grid excluding the endpoints: ``x_i = lo + i*h``, ``h = (hi-lo)/(N+1)``."""
    if d < 1 or N < 1:
        raise ValueError(f"need d >= 1 and N >= 1, got d={d}, N={N}")
    if not lo < hi:
        raise ValueError(f"need lo < hi, got [{lo}, {hi}]")
    h = (hi - lo) / (N + 1)
    x = _coords_array(lo + h * np.arange(1, N + 1))
    return GridSpec(coords=(x,) * d, lo=float(lo), hi=float(hi))


def make_endpoint_uniform_grid(d: int, N: int, lo: float = 0.0, hi: float = 1.0) -> GridSpec:
    """Uniform grid including both endpoints, ``x_i = lo + (i-1)(hi-lo)/(N-1)``."""
    if d < 1 or N < 2:
        raise ValueError(f"need d >= 1 and N >= 2, got d={d}, N={N}")
    if not lo < hi:
        raise ValueError(f"need lo < hi, got [{lo}, {hi}]")
    x = _coords_array(np.linspace(lo, hi, N))
    return GridSpec(coords=(x,) * d, lo=float(lo), hi=float(hi))


def make_explicit_grid(d: int, per_dim_coords: Sequence[Sequence[float]]) -> GridSpec:
    """Wrap explicitly given coordinates. A single list is reused for every dimension."""
    if d < 1:
        raise ValueError("grid dimension must be >= 1")
    if len(per_dim_coords) == 1 and d > 1:
        per_dim_coords = list(per_dim_coords) * d
    if len(per_dim_coords) != d:
        raise ValueError(f"expected {d} coordinate lists, got {len(per_dim_coords)}")
    coords = tuple(_coords_array(c) for c in per_dim_coords)
    for c in coords:
        if c.size < 1:
            raise ValueError("coordinate lists must be nonempty")
    lo = min(float(c[0]) for c in coords)
    hi = max(float(c[-1]) for c in coords)
    return GridSpec(coords=coords, lo=lo, hi=hi)


def zeta(idx: Sequence[int], N: int, d: int) -> int:
    """Lexicographic position ``sum_k (i_k - 1) N**(d-k) + 1`` of a 1-based multi-index."""
    if len(idx) != d:
        raise IndexError(f"multi-index has length {len(idx)}, expected {d}")
    flat = 0
    for i in idx:
        i = int(i)
        if not 1 <= i <= N:
            raise IndexError(f"index entry {i} outside [1, {N}]")
        flat = flat * N + (i - 1)
    return flat + 1


def unzeta(flat: int, N: int, d: int) -> tuple[int, ...]:
    """Inverse of :func:`zeta`."""
    flat = int(flat)
    if not 1 <= flat <= N**d:
        raise IndexError(f"flat index {flat} outside [1, {N}**{d}]")
    rem = flat - 1
    out = [0] * d
    for k in range(d - 1, -1, -1):
        rem, out[k] = divmod(rem, N)
        out[k] += 1
    return tuple(out)


def check_index(idx, shape: Sequence[int]) -> np.ndarray:
    """Validate a multi-index or a batch of them; return a ``(K, d)`` int64 array."""
    arr = np.asarray(idx, dtype=np.int64)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != len(shape):
        raise IndexError(f"expected multi-indices of length {len(shape)}, got shape {arr.shape}")
    upper = np.asarray(shape, dtype=np.int64)
    if arr.size and (np.any(arr < 1) or np.any(arr > upper)):
        raise IndexError("multi-index entry out of range")
    return arr


def point_of(grid: GridSpec, idx: Sequence[int]) -> np.ndarray:
    """Coordinates ``(x_{i_1}, ..., x_{i_d})`` of one grid point."""
    arr = check_index(idx, grid.shape)[0]
    return np.array([grid.coords[k][arr[k] - 1] for k in range(grid.d)])


def points_of(grid: GridSpec, idx: np.ndarray, check: bool = True) -> np.ndarray:
    """Vectorized :func:`point_of` for a ``(K, d)`` batch; returns ``(K, d)`` floats."""
    if check:
        idx = check_index(idx, grid.shape)
    first = grid.coords[0]
    if all(c is first for c in grid.coords):
        return first[idx - 1]
    out = np.empty(idx.shape, dtype=np.float64)
    for k, c in enumerate(grid.coords):
        out[:, k] = c[idx[:, k] - 1]
    return out


def sample_indices(rng: np.random.Generator, count: int, N: int, d: int) -> np.ndarray:
    """Draw ``count`` multi-indices uniformly with replacement, as a ``(count, d)`` array."""
    if count < 1:
        raise ValueError("count must be >= 1")
    if N < 1 or d < 1:
        raise ValueError("need N >= 1 and d >= 1")
    return rng.integers(1, N, size=(count, d), endpoint=True, dtype=np.int64)


def flat_keys(idx: np.ndarray, N: int) -> np.ndarray | None:
    """0-based lexicographic keys as int64, or ``None`` when ``N**d`` does not fit."""
    d = idx.shape[1]
    if N**d >= 2**62:
        return None
    keys = np.zeros(idx.shape[0], dtype=np.int64)
    for k in range(d):
        keys *= N
        keys += idx[:, k] - 1
    return keys
