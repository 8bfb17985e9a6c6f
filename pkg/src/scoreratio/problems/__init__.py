"""Benchmark problems with analytic oracles."""

from .banana import (
    BananaProblem,
    BananaRatio,
    banana_exact_hx,
    banana_log_ratio,
    banana_true_hx,
    banana_true_ratio,
    sample_banana,
)
from .darcy import (
    DarcyProblem,
    DarcyRatio,
    darcy_true_diagnostics,
    forward_jacobian,
    forward_map,
    kl_modes,
    log_permeability,
    observation_matrix,
    sample_darcy,
    solve_darcy,
)
from .lingauss import (
    LinGaussProblem,
    LinGaussRatio,
    lingauss_avg_kl,
    lingauss_true_hx,
    lingauss_true_hy,
    lingauss_true_ratio,
    sample_lingauss,
)

__all__ = [
    "BananaProblem", "BananaRatio", "banana_exact_hx", "banana_log_ratio", "banana_true_hx",
    "banana_true_ratio", "sample_banana",
    "DarcyProblem", "DarcyRatio", "darcy_true_diagnostics", "forward_jacobian", "forward_map",
    "kl_modes", "log_permeability", "observation_matrix", "sample_darcy", "solve_darcy",
    "LinGaussProblem", "LinGaussRatio", "lingauss_avg_kl", "lingauss_true_hx", "lingauss_true_hy",
    "lingauss_true_ratio", "sample_lingauss",
]
