"""Matrix-free solver for huge structured linear systems ``A u = b``.

The unknown vector is represented by a small ReLU network evaluated at grid
points, ``u_j ~ phi(x_j; theta)``, and the residual is minimized by
mini-batch gradient descent over randomly sampled rows. Rows of ``A`` are
produced on demand by row oracles, so nothing of size ``N**d`` is stored.
"""
from .evaluation import EvalReport, TestSet, evaluate, make_test_set
from .fnn import Architecture, NetworkParams, init_params, load_checkpoint, param_count, save_checkpoint
from .grid import GridSpec, unzeta, zeta
from .problems import ProblemInstance, build_pbn, build_poisson, build_queueing, build_riesz
from .solver import (
    DivergenceError,
    MeanPenalty,
    NormPenalty,
    PinComponent,
    Plain,
    TrainConfig,
    TrainHistory,
    batch_loss_and_grad,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "Architecture",
    "NetworkParams",
    "init_params",
    "param_count",
    "save_checkpoint",
    "load_checkpoint",
    "GridSpec",
    "zeta",
    "unzeta",
    "ProblemInstance",
    "build_poisson",
    "build_riesz",
    "build_queueing",
    "build_pbn",
    "Plain",
    "NormPenalty",
    "PinComponent",
    "MeanPenalty",
    "TrainConfig",
    "TrainHistory",
    "DivergenceError",
    "batch_loss_and_grad",
    "train",
    "TestSet",
    "make_test_set",
    "EvalReport",
    "evaluate",
]
