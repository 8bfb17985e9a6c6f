"""Score-ratio matching objectives.

The implicit loss needs only samples from the joint distribution:

    J(w) = mean_j [ 1/2 |w|^2 + Tr(grad_x w) + grad_x log rho(x)^T w ]

It differs from the explicit squared error against the true ratio by a
constant that does not depend on the network.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .exceptions import DimensionMismatch, EmptyBatch
from .linalg import make_rng, thin_svd


class StandardGaussianReference:
    """Reference density N(0, I); its score is ``-x``."""

    kind = "standard_gaussian"

    def score(self, X):
        return -np.asarray(X, dtype=float)

    def __repr__(self):
        return "StandardGaussianReference()"


STANDARD_GAUSSIAN = StandardGaussianReference()


@dataclass(frozen=True)
class LossBreakdown:
    quadratic: float
    trace: float
    reference: float
    regularizer: float = 0.0

    @property
    def total(self) -> float:
        return self.quadratic + self.trace + self.reference + self.regularizer

    def as_dict(self) -> dict:
        return {
            "quadratic": self.quadratic,
            "trace": self.trace,
            "reference": self.reference,
            "regularizer": self.regularizer,
            "total": self.total,
        }


def rademacher(rng, shape) -> np.ndarray:
    return rng.integers(0, 2, size=shape).astype(float) * 2.0 - 1.0


def _batch(X, Y, n, m):
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] == 0:
        raise EmptyBatch("batch must contain at least one sample")
    if X.shape[1] != n:
        raise DimensionMismatch(f"x has {X.shape[1]} columns, network expects {n}")
    Y = np.zeros((X.shape[0], m)) if Y is None else np.asarray(Y, dtype=float)
    if Y.shape != (X.shape[0], m):
        raise DimensionMismatch(f"y must have shape {(X.shape[0], m)}, got {Y.shape}")
    return X, Y


def implicit_terms(net, X, Y=None, rho=STANDARD_GAUSSIAN, trace_mode="exact", n_projections=100, rng=None):
    """Batch means of the three implicit-loss terms.

    Returns plain floats for plain networks and tape nodes for recorded ones.
    """
    X, Y = _batch(X, Y, net.n, net.m)
    directions = None
    if trace_mode == "sliced":
        rng = make_rng(0 if rng is None else rng)
        directions = rademacher(rng, (n_projections,) + X.shape)
    elif trace_mode != "exact":
        raise ValueError(f"trace_mode must be 'exact' or 'sliced', got {trace_mode!r}")
    w, tr = net.evaluate(X, Y, trace=trace_mode, directions=directions)
    quad = ad.mean(ad.sum_(w * w, axis=1)) * 0.5
    trace = ad.mean(tr)
    ref = ad.mean(ad.sum_(w * rho.score(X), axis=1))
    return quad, trace, ref


def implicit_loss(net, X, Y=None, rho=STANDARD_GAUSSIAN, trace_mode="exact", n_projections=100, rng=None):
    quad, trace, ref = implicit_terms(net, X, Y, rho, trace_mode, n_projections, rng)
    return LossBreakdown(float(ad.value(quad)), float(ad.value(trace)), float(ad.value(ref)))


def explicit_loss(net, X, Y, true_ratio) -> float:
    """``1/(2N) sum_j |w(x_j, y_j) - true_ratio(x_j, y_j)|^2``."""
    X, Y = _batch(X, Y, net.n, net.m)
    diff = np.asarray(net.forward(X, Y)) - np.asarray(true_ratio(X, Y))
    return 0.5 * float(np.mean(np.sum(diff * diff, axis=1)))


def nuclear_norm(W) -> float:
    W = np.asarray(W, dtype=float)
    if W.size == 0:
        return 0.0
    return float(np.sum(thin_svd(W).singulars))


def nuclear_subgradient(W) -> np.ndarray:
    """``U_k V_k^T`` over singular values above ``1e-12 * sigma_max``."""
    W = np.asarray(W, dtype=float)
    if W.size == 0:
        return np.zeros_like(W)
    svd = thin_svd(W)
    k = svd.rank()
    return svd.left[:, :k] @ svd.right[:, :k].T


def default_lambdas(n: int, m: int) -> tuple[float, float]:
    return (1.0 / n if n else 0.0, 1.0 / m if m else 0.0)


def regularized_objective(
    net, X, Y=None, rho=STANDARD_GAUSSIAN, lambda_x=0.0, lambda_y=0.0, trace_mode="exact", n_projections=100, rng=None
) -> LossBreakdown:
    if lambda_x < 0 or lambda_y < 0:
        raise ValueError("regularization weights must be nonnegative")
    loss = implicit_loss(net, X, Y, rho, trace_mode, n_projections, rng)
    reg = lambda_x * nuclear_norm(ad.value(net.W_x)) + lambda_y * nuclear_norm(ad.value(net.W_y))
    return LossBreakdown(loss.quadratic, loss.trace, loss.reference, reg)


def objective_and_gradient(
    net, X, Y=None, rho=STANDARD_GAUSSIAN, lambda_x=0.0, lambda_y=0.0, trace_mode="exact", n_projections=100, rng=None
) -> tuple[LossBreakdown, np.ndarray]:
    """Regularized objective and its flat parameter gradient.

    The smooth part is differentiated on a tape; nuclear-norm subgradients are
    added to the ``W_x`` and ``W_y`` slots.
    """
    if lambda_x < 0 or lambda_y < 0:
        raise ValueError("regularization weights must be nonnegative")
    tape = ad.Tape()
    recorded = net.record(tape)
    quad, trace, ref = implicit_terms(recorded, X, Y, rho, trace_mode, n_projections, rng)
    total = quad + trace + ref
    g = ad.grad(total, recorded)
    Wx = ad.value(net.W_x)
    Wy = ad.value(net.W_y)
    reg = 0.0
    if lambda_x:
        reg += lambda_x * nuclear_norm(Wx)
        g[: Wx.size] += lambda_x * nuclear_subgradient(Wx).ravel()
    if lambda_y and Wy.size:
        reg += lambda_y * nuclear_norm(Wy)
        g[Wx.size : Wx.size + Wy.size] += lambda_y * nuclear_subgradient(Wy).ravel()
    breakdown = LossBreakdown(float(quad.value), float(trace.value), float(ref.value), reg)
    return breakdown, g


@dataclass(frozen=True)
class AffineRatio:
    """``w(x, y) = B x + C y + b``."""

    B: np.ndarray
    C: np.ndarray
    b: np.ndarray

    @property
    def n(self):
        return self.B.shape[0]

    @property
    def m(self):
        return self.C.shape[1]

    def forward(self, X, Y=None):
        X = np.asarray(X, dtype=float)
        Y = np.zeros((X.shape[0], self.m)) if Y is None else np.asarray(Y, dtype=float)
        return X @ self.B.T + Y @ self.C.T + self.b

    __call__ = forward

    def observation_gradient(self, X, Y=None):
        N = np.asarray(X).shape[0]
        return np.broadcast_to(self.C, (N,) + self.C.shape).copy()


def fit_affine_ratio(X, Y=None, rho=STANDARD_GAUSSIAN) -> AffineRatio:
    """Minimize the implicit loss over affine maps in closed form.

    With features ``phi = (x, y, 1)`` and ``w = Theta phi`` the loss is
    quadratic in ``Theta``; setting its gradient to zero gives
    ``Theta E[phi phi^T] = -E[score(x) phi^T] - [I 0 0]``.
    """
    X = np.asarray(X, dtype=float)
    N, n = X.shape
    Y = np.zeros((N, 0)) if Y is None else np.asarray(Y, dtype=float)
    m = Y.shape[1]
    Phi = np.hstack([X, Y, np.ones((N, 1))])
    S = Phi.T @ Phi / N
    rhs = -(rho.score(X).T @ Phi) / N
    rhs[:, :n] -= np.eye(n)
    Theta = np.linalg.solve(S, rhs.T).T
    return AffineRatio(Theta[:, :n], Theta[:, n : n + m], Theta[:, n + m])
