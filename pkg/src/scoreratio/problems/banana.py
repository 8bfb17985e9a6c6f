"""Rotated "banana" target in d dimensions with no observations.

Generative process in the latent frame: ``x1' ~ N(0, 1)``,
``x2' | x1' ~ N(x1'^2, 1)``, the remaining coordinates standard normal; the
parameter is ``x = R x'`` for an orthogonal ``R``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..exceptions import DimensionMismatch
from ..linalg import make_rng, random_rotation
from ..samples import JointSamples


@dataclass(frozen=True)
class BananaProblem:
    d: int
    R: np.ndarray
    seed: int | None = None

    def __post_init__(self):
        R = np.asarray(self.R, dtype=float)
        if self.d < 2 or R.shape != (self.d, self.d):
            raise DimensionMismatch(f"need d >= 2 and a {self.d}x{self.d} rotation")
        if np.abs(R.T @ R - np.eye(self.d)).max() > 1e-10:
            raise ValueError("R is not orthogonal")
        object.__setattr__(self, "R", R)

    @classmethod
    def create(cls, d: int = 10, seed: int = 0, rotate: bool = True) -> "BananaProblem":
        R = random_rotation(d, make_rng([seed, 101])) if rotate else np.eye(d)
        return cls(d, R, seed)

    @property
    def n(self):
        return self.d

    @property
    def m(self):
        return 0


def sample_banana(p: BananaProblem, N: int, rng) -> JointSamples:
    if N < 1:
        raise ValueError("N must be >= 1")
    rng = make_rng(rng)
    z = rng.standard_normal((N, p.d))
    z[:, 1] += z[:, 0] ** 2
    return JointSamples(z @ p.R.T, np.zeros((N, 0)))


def _latent_ratio(xp):
    g = np.zeros_like(xp)
    g[:, 0] = 2.0 * xp[:, 0] * (xp[:, 1] - xp[:, 0] ** 2)
    g[:, 1] = xp[:, 0] ** 2
    return g


def banana_log_ratio(p: BananaProblem, x) -> np.ndarray:
    """``log pi_X(x) - log rho(x)`` up to an additive constant."""
    X = np.atleast_2d(np.asarray(x, dtype=float))
    xp = X @ p.R
    out = -0.5 * (xp[:, 1] - xp[:, 0] ** 2) ** 2 + 0.5 * xp[:, 1] ** 2
    return out if np.ndim(x) == 2 else out[0]


def banana_true_ratio(p: BananaProblem, x, y=None) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != p.d:
        raise DimensionMismatch(f"x must have length {p.d}")
    X = np.atleast_2d(x)
    out = _latent_ratio(X @ p.R) @ p.R.T
    return out if x.ndim == 2 else out[0]


def banana_true_hx(p: BananaProblem, N_mc: int, rng) -> np.ndarray:
    """Monte Carlo ``E[w w^T]`` with the analytic ratio."""
    X = sample_banana(p, N_mc, rng).xs
    W = banana_true_ratio(p, X)
    H = W.T @ W / N_mc
    return 0.5 * (H + H.T)


def banana_exact_hx(p: BananaProblem) -> np.ndarray:
    # E[g1^2] = 4 E[x1^2] E[(x2-x1^2)^2] = 4, E[g2^2] = E[x1^4] = 3, E[g1 g2] = 0
    D = np.zeros(p.d)
    D[:2] = (4.0, 3.0)
    return (p.R * D) @ p.R.T


class BananaRatio:
    """Analytic ratio exposed with the network evaluation interface."""

    def __init__(self, p: BananaProblem):
        self.problem = p
        self.n, self.m = p.d, 0

    def forward(self, X, Y=None):
        return banana_true_ratio(self.problem, X)

    __call__ = forward

    def observation_gradient(self, X, Y=None):
        return np.zeros((np.asarray(X).shape[0], self.n, 0))
