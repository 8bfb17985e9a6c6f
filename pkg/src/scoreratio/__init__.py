"""Gradient-free dimension reduction by score-ratio matching.

A ridge-structured network ``w(x, y) = W_x psi(W_x^T x, W_y^T y)`` is fitted to
the score ratio ``grad_x log(pi(x | y) / rho(x))`` from joint samples alone.
Eigenvectors of the resulting diagnostic matrices give parameter and
observation subspaces with certified posterior-approximation bounds.
"""

from .diagnostics import (
    DiagnosticMatrix,
    NetConfig,
    ReductionBasis,
    algorithm1,
    algorithm2,
    error_bound_cdr,
    error_bound_cmi,
    estimate_hx,
    estimate_hy,
    select_rank,
)
from .estimators import DeflatedScoreRatioReduction, ScoreRatioReduction
from .network import DeflatedNetwork, ScoreRatioNetwork, load_checkpoint, save_checkpoint
from .objective import explicit_loss, implicit_loss, regularized_objective
from .samples import JointSamples
from .training import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "DeflatedNetwork", "DeflatedScoreRatioReduction", "DiagnosticMatrix", "JointSamples", "NetConfig",
    "ReductionBasis", "ScoreRatioNetwork", "ScoreRatioReduction", "TrainConfig", "algorithm1", "algorithm2",
    "error_bound_cdr", "error_bound_cmi", "estimate_hx", "estimate_hy", "explicit_loss", "implicit_loss",
    "load_checkpoint", "regularized_objective", "save_checkpoint", "select_rank", "train",
]
