"""Fully connected ReLU network ``phi(x) = a^T h_{L-1}(...h_1(x))`` with manual backprop.

All parameters live in one contiguous float64 vector; the per-layer weights
are reshaped views into it. The flat order (also the checkpoint order) is::

    W_1 (M x d, row-major), b_1, W_2 (M x M), b_2, ..., W_{L-1}, b_{L-1}, a
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "Architecture",
    "NetworkParams",
    "param_count",
    "init_params",
    "forward",
    "forward_with_grad",
    "batch_forward",
    "forward_cache",
    "backward",
    "value_and_vjp",
    "save_checkpoint",
    "load_checkpoint",
]


@dataclass(frozen=True)
class Architecture:
    """Depth ``L`` (number of affine maps incl. the output), width ``M``, input dim ``d``."""

    L: int
    M: int
    d: int

    def __post_init__(self):
        if self.L < 2 or self.M < 1 or self.d < 1:
            raise ValueError(f"invalid architecture L={self.L}, M={self.M}, d={self.d}")

    @property
    def n_hidden(self) -> int:
        return self.L - 1

    def layer_shapes(self) -> list[tuple[int, int]]:
        return [(self.M, self.d)] + [(self.M, self.M)] * (self.L - 2)


def param_count(arch: Architecture) -> int:
    L, M, d = arch.L, arch.M, arch.d
    return (L - 2) * M * M + (L + d) * M


class NetworkParams:
    """Parameter vector of one network (also used for gradients of the same shape)."""

    def __init__(self, arch: Architecture, data: np.ndarray | None = None):
        self.arch = arch
        n = param_count(arch)
        if data is None:
            data = np.zeros(n)
        data = np.ascontiguousarray(data, dtype=np.float64)
        if data.shape != (n,):
            raise ValueError(f"expected {n} parameters, got shape {data.shape}")
        self.data = data
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        pos = 0
        for rows, cols in arch.layer_shapes():
            self.weights.append(data[pos:pos + rows * cols].reshape(rows, cols))
            pos += rows * cols
            self.biases.append(data[pos:pos + rows])
            pos += rows
        self.a = data[pos:pos + arch.M]

    def copy(self) -> "NetworkParams":
        return NetworkParams(self.arch, self.data.copy())

    def __len__(self) -> int:
        return self.data.size

    def __repr__(self) -> str:
        a = self.arch
        return f"NetworkParams(L={a.L}, M={a.M}, d={a.d}, n={self.data.size})"


def init_params(arch: Architecture, scale_mode: str = "inverse-sqrt", seed=None) -> NetworkParams:
    """Draw every parameter i.i.d. uniform.

    ``scale_mode="inverse-sqrt"`` uses ``U(-1/sqrt(M), 1/sqrt(M))``;
    ``"wide"`` uses ``U(-sqrt(M), sqrt(M))``, which blows up
    pre-activations for deeper nets and is kept only for comparison.
    """
    if scale_mode == "inverse-sqrt":
        bound = 1.0 / np.sqrt(arch.M)
    elif scale_mode == "wide":
        bound = np.sqrt(arch.M)
    else:
        raise ValueError(f"unknown scale_mode {scale_mode!r}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return NetworkParams(arch, rng.uniform(-bound, bound, size=param_count(arch)))


def _hidden(theta: NetworkParams, X: np.ndarray) -> list[np.ndarray]:
    # post-activations h_0 = X, h_1, ..., h_{L-1}
    hs = [X]
    h = X
    for W, b in zip(theta.weights, theta.biases):
        h = h @ W.T
        h += b
        np.maximum(h, 0.0, out=h)
        hs.append(h)
    return hs


def _as_batch(theta: NetworkParams, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != theta.arch.d:
        raise ValueError(f"points must have dimension {theta.arch.d}, got shape {X.shape}")
    return X


def _check_finite(values: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(values)):
        raise FloatingPointError("network output is not finite")
    return values


def batch_forward(theta: NetworkParams, points) -> np.ndarray:
    """Evaluate ``phi`` at each row of ``points`` (shape ``(K, d)``)."""
    X = np.asarray(points, dtype=np.float64)
    if X.size == 0:
        return np.zeros(0)
    X = _as_batch(theta, X)
    return _check_finite(_hidden(theta, X)[-1] @ theta.a)


def forward(theta: NetworkParams, x) -> float:
    return float(batch_forward(theta, np.asarray(x, dtype=np.float64)[None, :])[0])


def forward_cache(theta: NetworkParams, points) -> tuple[np.ndarray, list[np.ndarray]]:
    """Values at ``points`` plus the hidden activations needed by :func:`backward`."""
    X = _as_batch(theta, points)
    hs = _hidden(theta, X)
    return _check_finite(hs[-1] @ theta.a), hs


def backward(theta: NetworkParams, hs: list[np.ndarray], cotangent) -> NetworkParams:
    """Reverse sweep: ``sum_i c_i grad_theta phi(x_i)`` from cached activations."""
    c = np.asarray(cotangent, dtype=np.float64)
    if c.shape != (hs[0].shape[0],):
        raise ValueError("cotangent must have one entry per point")
    grad = NetworkParams(theta.arch)
    grad.a[:] = c @ hs[-1]
    # relu'(0) = 0: h > 0 iff pre-activation > 0
    delta = np.multiply(hs[-1] > 0, theta.a, dtype=np.float64)
    delta *= c[:, None]
    for layer in range(len(theta.weights) - 1, -1, -1):
        grad.weights[layer][:] = delta.T @ hs[layer]
        grad.biases[layer][:] = delta.sum(axis=0)
        if layer > 0:
            delta = delta @ theta.weights[layer]
            delta *= hs[layer] > 0
    return grad


def value_and_vjp(theta: NetworkParams, points, cotangent) -> tuple[np.ndarray, NetworkParams]:
    """Values ``phi(x_i)`` and the weighted gradient ``sum_i c_i grad_theta phi(x_i)``.

    One reverse sweep covers the whole batch; the per-point gradient is the
    special case of a single point with cotangent 1.
    """
    values, hs = forward_cache(theta, points)
    return values, backward(theta, hs, cotangent)


def forward_with_grad(theta: NetworkParams, x) -> tuple[float, NetworkParams]:
    """``phi(x)`` together with ``grad_theta phi(x)`` at a single point."""
    values, grad = value_and_vjp(theta, np.asarray(x, dtype=np.float64)[None, :], np.ones(1))
    return float(values[0]), grad


# Checkpoint layout (little-endian):
#   8 bytes  magic b"NNLSCKP1"
#   4 x int64  L, M, d, seed (-1 when unknown)
#   n x float64  parameters in the flat order documented at the top of this module
_MAGIC = b"NNLSCKP1"
_HEADER = struct.Struct("<8s4q")


def save_checkpoint(path, theta: NetworkParams, seed: int | None = None) -> None:
    a = theta.arch
    header = _HEADER.pack(_MAGIC, a.L, a.M, a.d, -1 if seed is None else int(seed))
    with open(Path(path), "wb") as fh:
        fh.write(header)
        fh.write(theta.data.astype("<f8").tobytes())


def load_checkpoint(path) -> tuple[NetworkParams, int | None]:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ValueError("checkpoint too short")
    magic, L, M, d, seed = _HEADER.unpack_from(raw)
    if magic != _MAGIC:
        raise ValueError("not a network checkpoint")
    arch = Architecture(L, M, d)
    body = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
    if body.size != param_count(arch):
        raise ValueError(f"checkpoint holds {body.size} values, expected {param_count(arch)}")
    return NetworkParams(arch, body.astype(np.float64)), (None if seed < 0 else seed)
