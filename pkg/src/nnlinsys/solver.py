"""Mini-batch residual minimization for ``A u = b`` with ``u`` represented by a network.

The batch gradient follows the memory-saving loop over sampled rows: for each
row ``k`` accumulate ``s1 = sum_j A_kj phi(x_j)`` and the matching gradient
combination over the row's nonzeros, then ``g += (s1 - b_k) s2``. Here the
per-point gradients are never formed one by one: every nonzero contributes
the weight ``(2/|S|) (s1_k - b_k) A_kj`` to its evaluation point and one
reverse sweep through the network produces ``sum`` of the weighted gradients.
"""
from __future__ import annotations

import csv
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Union

import numpy as np

from . import fnn
from .fnn import Architecture, NetworkParams
from .grid import GridSpec, check_index, flat_keys, point_of, points_of, sample_indices
from .operators import RowOracle

log = logging.getLogger(__name__)

__all__ = [
    "Plain",
    "NormPenalty",
    "PinComponent",
    "MeanPenalty",
    "LossSpec",
    "TrainConfig",
    "TrainRecord",
    "TrainHistory",
    "DivergenceError",
    "lr_schedule",
    "batch_loss_and_grad",
    "sgd_step",
    "Adam",
    "train",
    "solution_index_function",
]


# -- loss variants -------------------------------------------------------------


@dataclass(frozen=True)
class Plain:
    """Mean squared residual only."""


@dataclass(frozen=True)
class NormPenalty:
    """Adds ``(||Phi||_p - 1)**2 / eps``; the norm is estimated from the batch
    as ``(n_total * mean_S |phi|**p)**(1/p)``."""

    p: float = 2.0
    eps: float = 1.0

    def __post_init__(self):
        if self.p < 1 or not self.eps > 0:
            raise ValueError("need p >= 1 and eps > 0")


@dataclass(frozen=True)
class PinComponent:
    """Adds ``(phi(x_pin) - 1)**2 / eps`` to single out one null vector."""

    index: tuple[int, ...]
    eps: float = 1.0

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        object.__setattr__(self, "index", tuple(int(i) for i in self.index))


@dataclass(frozen=True)
class MeanPenalty:
    """Adds ``(mean_S phi - 1)**2 / eps`` with the mean taken over the batch points."""

    eps: float = 1.0

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError("eps must be positive")


LossSpec = Union[Plain, NormPenalty, PinComponent, MeanPenalty]


# -- configuration and history ---------------------------------------------------------


@dataclass
class TrainConfig:
    batch_size: int = 10_000
    max_iters: int = 50_000
    lr_start: float = 1e-3
    lr_end: float = 1e-5
    seed: int = 0
    eval_every: int = 1000
    optimizer: str = "sgd"
    init_mode: str = "inverse-sqrt"
    # evaluation points per chunk; bounds the activation memory
    chunk_size: int = 1 << 17
    dedup: bool = True
    threads: int = 1
    reproducible: bool = True

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.max_iters < 0:
            raise ValueError("max_iters must be >= 0")
        if not 0 < self.lr_end <= self.lr_start:
            raise ValueError("need 0 < lr_end <= lr_start")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"optimizer must be 'sgd' or 'adam', got {self.optimizer!r}")
        if self.eval_every < 0 or self.chunk_size < 1 or self.threads < 1:
            raise ValueError("eval_every >= 0, chunk_size >= 1 and threads >= 1 required")


@dataclass
class TrainRecord:
    iter: int
    loss: float
    lr: float
    e_inf: float | None = None
    e_l2: float | None = None
    res_l2: float | None = None


HISTORY_COLUMNS = ("iter", "loss", "lr", "e_inf", "e_l2", "res_l2")


@dataclass
class TrainHistory:
    records: list[TrainRecord] = field(default_factory=list)
    seconds: float = 0.0

    def __len__(self):
        return len(self.records)

    def append(self, rec: TrainRecord) -> None:
        if self.records and rec.iter <= self.records[-1].iter:
            raise ValueError("history iterations must be strictly increasing")
        self.records.append(rec)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(HISTORY_COLUMNS)
            for r in self.records:
                w.writerow(["" if v is None else repr(v) for v in (asdict(r)[c] for c in HISTORY_COLUMNS)])

    @classmethod
    def from_csv(cls, path) -> "TrainHistory":
        hist = cls()
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or tuple(header) != HISTORY_COLUMNS:
                raise ValueError(f"{path}: expected header {','.join(HISTORY_COLUMNS)}")
            for lineno, row in enumerate(reader, start=2):
                if len(row) != len(HISTORY_COLUMNS):
                    raise ValueError(f"{path}:{lineno}: expected {len(HISTORY_COLUMNS)} fields")
                try:
                    vals = [None if v == "" else float(v) for v in row]
                except ValueError as exc:
                    raise ValueError(f"{path}:{lineno}: {exc}") from None
                if vals[0] is None or vals[1] is None or vals[2] is None:
                    raise ValueError(f"{path}:{lineno}: iter, loss and lr are required")
                hist.append(TrainRecord(int(vals[0]), *vals[1:]))
        return hist


class DivergenceError(FloatingPointError):
    """Non-finite loss during training; carries the state up to the failure."""

    def __init__(self, msg, iteration=None, row=None, history=None, theta=None):
        super().__init__(msg)
        self.iteration = iteration
        self.row = row
        self.history = history
        self.theta = theta


# -- the gradient --------------------------------------------------------------------


def lr_schedule(cfg: TrainConfig, i: int) -> float:
    """Geometric decay from ``lr_start`` at ``i = 0`` to ``lr_end`` at ``i = max_iters``."""
    if cfg.max_iters == 0:
        return cfg.lr_start
    return cfg.lr_start * (cfg.lr_end / cfg.lr_start) ** (i / cfg.max_iters)


_DENSE_DEDUP_LIMIT = 1 << 24


def _unique_points(idx: np.ndarray, N: int, table_limit: int | None = None):
    keys = flat_keys(idx, N)
    if keys is None:
        return idx, None
    size = N ** idx.shape[1]
    if table_limit is None:
        table_limit = max(_DENSE_DEDUP_LIMIT, 4 * keys.size)
    if size <= table_limit:
        # small grid: a lookup table over all positions beats sorting
        slot = np.full(size, -1, dtype=np.int64)
        slot[keys] = 1
        uniq_keys = np.flatnonzero(slot >= 0)
        slot[uniq_keys] = np.arange(uniq_keys.size)
        inverse = slot[keys]
        first = np.empty(uniq_keys.size, dtype=np.int64)
        first[inverse[::-1]] = np.arange(keys.size - 1, -1, -1)
        return idx[first], inverse
    _, first, inverse = np.unique(keys, return_index=True, return_inverse=True)
    return idx[first], inverse.ravel()


def _eval_and_backprop(theta, X, weights_fn, chunk_size, pool, reproducible):
    """Evaluate ``phi`` on ``X``, call ``weights_fn(values) -> cotangents``, backprop.

    With a single chunk the activations are kept between the two sweeps;
    otherwise they are recomputed per chunk so memory stays ``O(chunk * M)``.
    """
    n = X.shape[0]
    if n <= chunk_size and pool is None:
        values, hs = fnn.forward_cache(theta, X)
        return values, fnn.backward(theta, hs, weights_fn(values))

    starts = list(range(0, n, chunk_size))
    if pool is not None:
        values = np.concatenate(list(pool.map(lambda s: fnn.batch_forward(theta, X[s:s + chunk_size]), starts)))
    else:
        values = np.concatenate([fnn.batch_forward(theta, X[s:s + chunk_size]) for s in starts])
    cot = weights_fn(values)

    def chunk_grad(s):
        _, hs = fnn.forward_cache(theta, X[s:s + chunk_size])
        return fnn.backward(theta, hs, cot[s:s + chunk_size]).data

    total = np.zeros(fnn.param_count(theta.arch))
    if pool is None:
        for s in starts:
            total += chunk_grad(s)
    elif reproducible:
        for g in pool.map(chunk_grad, starts):
            total += g
    else:
        for fut in as_completed([pool.submit(chunk_grad, s) for s in starts]):
            total += fut.result()
    return values, NetworkParams(theta.arch, total)


def batch_loss_and_grad(
    op: RowOracle,
    grid: GridSpec,
    theta: NetworkParams,
    batch,
    loss: LossSpec = Plain(),
    *,
    dedup: bool = True,
    chunk_size: int = 1 << 17,
    pool: ThreadPoolExecutor | None = None,
    reproducible: bool = True,
) -> tuple[float, NetworkParams]:
    """Mini-batch loss ``|S|^-1 sum_k (a_k^T Phi - b_k)^2`` (+ penalty) and its gradient."""
    batch = check_index(batch, op.shape)
    K = batch.shape[0]
    if K == 0:
        raise ValueError("batch must be nonempty")
    rows = op.rows(batch, check=False)
    b = op.rhs(batch, rows)

    # evaluation points: every nonzero column, then penalty points
    pieces = [rows.cols]
    if isinstance(loss, PinComponent):
        pieces.append(check_index(loss.index, op.shape))
    elif isinstance(loss, (MeanPenalty, NormPenalty)):
        pieces.append(batch)
    all_idx = np.concatenate(pieces) if len(pieces) > 1 else rows.cols
    n_entries = rows.nnz
    if dedup:
        uniq, inverse = _unique_points(all_idx, op.N)
    else:
        uniq, inverse = all_idx, None
    X = points_of(grid, uniq, check=False)

    state = {}

    def weights_fn(values):
        vals_all = values if inverse is None else values[inverse]
        phi_cols = vals_all[:n_entries]
        s1 = np.bincount(rows.row, weights=rows.vals * phi_cols, minlength=K)
        r = s1 - b
        data_loss = float(np.mean(r * r))
        if not math.isfinite(data_loss):
            bad = np.nonzero(~np.isfinite(r))[0]
            state["bad_row"] = tuple(int(i) for i in batch[bad[0]]) if bad.size else None
            raise FloatingPointError("non-finite residual")
        c_all = np.zeros(vals_all.size)
        c_all[:n_entries] = (2.0 / K) * r[rows.row] * rows.vals
        penalty = 0.0
        if isinstance(loss, PinComponent):
            phi_pin = vals_all[n_entries]
            penalty = (phi_pin - 1.0) ** 2 / loss.eps
            c_all[n_entries] = 2.0 * (phi_pin - 1.0) / loss.eps
        elif isinstance(loss, MeanPenalty):
            phi_b = vals_all[n_entries:]
            mean = phi_b.mean()
            penalty = (mean - 1.0) ** 2 / loss.eps
            c_all[n_entries:] = 2.0 * (mean - 1.0) / (loss.eps * K)
        elif isinstance(loss, NormPenalty):
            phi_b = vals_all[n_entries:]
            p = loss.p
            n_total = float(op.size)
            absb = np.abs(phi_b)
            norm = (n_total * np.mean(absb**p)) ** (1.0 / p)
            penalty = (norm - 1.0) ** 2 / loss.eps
            if norm > 0:
                dnorm = (n_total / K) * absb ** (p - 1) * np.sign(phi_b) * norm ** (1 - p)
                c_all[n_entries:] = 2.0 * (norm - 1.0) / loss.eps * dnorm
        state["loss"] = data_loss + penalty
        if inverse is None:
            return c_all
        return np.bincount(inverse, weights=c_all, minlength=values.size)

    try:
        _, grad = _eval_and_backprop(theta, X, weights_fn, chunk_size, pool, reproducible)
    except FloatingPointError as exc:
        err = DivergenceError(f"non-finite loss ({exc})", row=state.get("bad_row"))
        raise err from None
    if not np.all(np.isfinite(grad.data)):
        raise DivergenceError("non-finite gradient")
    return state["loss"], grad


def sgd_step(theta: NetworkParams, grad: NetworkParams, tau: float) -> NetworkParams:
    """``theta - tau * grad`` as a new parameter set."""
    if grad.arch != theta.arch:
        raise ValueError("gradient and parameters have different architectures")
    return NetworkParams(theta.arch, theta.data - tau * grad.data)


class Adam:
    """Adaptive-moment update applied in place to the flat parameter vector."""

    def __init__(self, n: int, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.m = np.zeros(n)
        self.v = np.zeros(n)
        self.t = 0
        self.beta1, self.beta2, self.eps = beta1, beta2, eps

    def step(self, theta: NetworkParams, grad: NetworkParams, lr: float) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        g = grad.data
        self.m *= b1
        self.m += (1 - b1) * g
        self.v *= b2
        self.v += (1 - b2) * g * g
        mhat = self.m / (1 - b1**self.t)
        vhat = self.v / (1 - b2**self.t)
        theta.data -= lr * mhat / (np.sqrt(vhat) + self.eps)


# -- training loop -----------------------------------------------------------------------


def train(
    instance,
    arch: Architecture,
    cfg: TrainConfig,
    *,
    theta0: NetworkParams | None = None,
    test_set=None,
    checkpoint_path=None,
    on_record: Callable[[TrainRecord], None] | None = None,
) -> tuple[NetworkParams, TrainHistory]:
    """Run ``cfg.max_iters`` SGD (or Adam) iterations on a fresh uniform batch each.

    Logs the batch loss every ``cfg.eval_every`` iterations and at the last
    one; with ``test_set`` the evaluation metrics are added to those records.
    Seeds: ``cfg.seed`` is split into independent streams for initialization
    and batch sampling.
    """
    from . import evaluation

    if arch.d != instance.grid.d:
        raise ValueError(f"architecture input dim {arch.d} != grid dim {instance.grid.d}")
    init_ss, batch_ss = np.random.SeedSequence(cfg.seed).spawn(2)
    if theta0 is None:
        theta = fnn.init_params(arch, cfg.init_mode, np.random.default_rng(init_ss))
    else:
        theta = theta0.copy()
    rng = np.random.default_rng(batch_ss)
    opt = Adam(len(theta)) if cfg.optimizer == "adam" else None
    history = TrainHistory()
    op, grid, loss = instance.oracle, instance.grid, instance.loss
    N, d = op.N, op.d

    pool = ThreadPoolExecutor(cfg.threads) if cfg.threads > 1 else None
    chunk = cfg.chunk_size
    t0 = time.perf_counter()
    try:
        for i in range(cfg.max_iters):
            batch = sample_indices(rng, cfg.batch_size, N, d)
            if pool is not None:
                chunk = max(1, min(cfg.chunk_size, -(-batch.shape[0] * op.nnz_per_row_bound // cfg.threads)))
            try:
                value, grad = batch_loss_and_grad(
                    op, grid, theta, batch, loss,
                    dedup=cfg.dedup, chunk_size=chunk, pool=pool, reproducible=cfg.reproducible,
                )
            except DivergenceError as exc:
                history.seconds = time.perf_counter() - t0
                raise DivergenceError(
                    f"training diverged at iteration {i + 1}: {exc}",
                    iteration=i + 1, row=exc.row, history=history, theta=theta,
                ) from None
            lr = lr_schedule(cfg, i)
            if opt is None:
                theta.data -= lr * grad.data
            else:
                opt.step(theta, grad, lr)
            step = i + 1
            if not np.all(np.isfinite(theta.data)):
                history.seconds = time.perf_counter() - t0
                raise DivergenceError(f"training diverged at iteration {step}: parameters overflowed",
                                      iteration=step, history=history, theta=theta)

            if (cfg.eval_every and step % cfg.eval_every == 0) or step == cfg.max_iters:
                rec = TrainRecord(step, value, lr)
                if test_set is not None:
                    try:
                        report = evaluation.evaluate(theta, instance, test_set)
                    except FloatingPointError as exc:
                        history.seconds = time.perf_counter() - t0
                        raise DivergenceError(f"training diverged at iteration {step}: {exc}",
                                              iteration=step, history=history, theta=theta) from None
                    rec.e_inf, rec.e_l2, rec.res_l2 = report.e_inf, report.e_l2, report.res_l2
                history.append(rec)
                log.info("iter %d loss %.4e lr %.2e", step, value, lr)
                if on_record is not None:
                    on_record(rec)
                if checkpoint_path is not None:
                    fnn.save_checkpoint(checkpoint_path, theta, cfg.seed)
    finally:
        if pool is not None:
            pool.shutdown()
    history.seconds = time.perf_counter() - t0
    return theta, history


def solution_index_function(theta: NetworkParams, grid: GridSpec) -> Callable:
    """The trained solution as an index function ``j -> phi(x_j)``."""

    def phi_hat(j) -> float:
        return fnn.forward(theta, point_of(grid, j))

    return phi_hat
