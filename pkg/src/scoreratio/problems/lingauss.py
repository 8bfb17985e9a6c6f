"""Linear-Gaussian model ``x ~ N(0, I)``, ``y = A x + e``, ``e ~ N(0, Gamma)``.

With the prior as reference the score ratio is the likelihood score
``A^T Gamma^{-1} (y - A x)``, so every diagnostic has a closed form.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..exceptions import DimensionMismatch, NotOrthonormal, NotPositiveDefinite
from ..linalg import make_rng
from ..samples import JointSamples


@dataclass(frozen=True)
class LinGaussProblem:
    A: np.ndarray
    noise_cov: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        G = np.atleast_2d(np.asarray(self.noise_cov, dtype=float))
        if G.shape != (A.shape[0], A.shape[0]):
            raise DimensionMismatch(f"noise covariance must be {A.shape[0]}x{A.shape[0]}, got {G.shape}")
        if np.abs(G - G.T).max() > 1e-12 * max(1.0, np.abs(G).max()):
            raise NotPositiveDefinite("noise covariance is not symmetric")
        try:
            L = np.linalg.cholesky(G)
        except np.linalg.LinAlgError as exc:
            raise NotPositiveDefinite("noise covariance is not positive definite") from exc
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "noise_cov", G)
        object.__setattr__(self, "_chol", L)
        object.__setattr__(self, "_prec", np.linalg.inv(G))

    @classmethod
    def random(cls, n: int, m: int, rng, noise_var: float | None = None) -> "LinGaussProblem":
        """Gaussian ``A``; ``Gamma = noise_var * I`` or a random well-conditioned SPD matrix."""
        rng = make_rng(rng)
        A = rng.standard_normal((m, n))
        if noise_var is not None:
            G = noise_var * np.eye(m)
        else:
            B = rng.standard_normal((m, m))
            G = B @ B.T / m + 0.5 * np.eye(m)
        return cls(A, G)

    @property
    def n(self):
        return self.A.shape[1]

    @property
    def m(self):
        return self.A.shape[0]

    @property
    def noise_precision(self):
        return self._prec

    @property
    def noise_chol(self):
        return self._chol


def sample_lingauss(p: LinGaussProblem, N: int, rng) -> JointSamples:
    rng = make_rng(rng)
    X = rng.standard_normal((N, p.n))
    E = rng.standard_normal((N, p.m)) @ p.noise_chol.T
    return JointSamples(X, X @ p.A.T + E)


def lingauss_true_ratio(p: LinGaussProblem, x, y) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    return (y - x @ p.A.T) @ p.noise_precision @ p.A


def lingauss_true_hx(p: LinGaussProblem) -> np.ndarray:
    H = p.A.T @ p.noise_precision @ p.A
    return 0.5 * (H + H.T)


def lingauss_true_hy(p: LinGaussProblem) -> np.ndarray:
    H = p.noise_precision @ p.A @ p.A.T @ p.noise_precision
    return 0.5 * (H + H.T)


def _check_orthonormal(U, n):
    U = np.asarray(U, dtype=float).reshape(n, -1)
    if U.shape[1] and np.abs(U.T @ U - np.eye(U.shape[1])).max() > 1e-8:
        raise NotOrthonormal("basis columns are not orthonormal")
    return U


def lingauss_avg_kl(p: LinGaussProblem, U_r) -> float:
    """Data-averaged KL from the posterior to ``pi(U_r^T x | y) rho(x_perp)``.

    This is the conditional mutual information between the discarded
    coordinates and ``y``: ``1/2 log det(I + Q H Q)`` with ``Q = I - U_r U_r^T``.
    """
    U = _check_orthonormal(U_r, p.n)
    Q = np.eye(p.n) - U @ U.T
    sign, logdet = np.linalg.slogdet(np.eye(p.n) + Q @ lingauss_true_hx(p) @ Q)
    return 0.5 * logdet


class LinGaussRatio:
    """Analytic ratio with the network evaluation interface."""

    def __init__(self, p: LinGaussProblem):
        self.problem = p
        self.n, self.m = p.n, p.m
        self._C = p.A.T @ p.noise_precision

    def forward(self, X, Y):
        return lingauss_true_ratio(self.problem, X, Y)

    __call__ = forward

    def observation_gradient(self, X, Y=None):
        N = np.asarray(X).shape[0]
        return np.broadcast_to(self._C, (N,) + self._C.shape).copy()
