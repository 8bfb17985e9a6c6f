"""Diagnostic matrices, rank selection, error bounds and the reduction drivers.

``algorithm1`` trains one network and eigendecomposes its diagnostics;
``algorithm2`` trains a sequence of networks, each restricted by orthogonal
projectors to the complement of the directions found so far.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .exceptions import EmptyBatch, NotOrthonormal, RankExhausted
from .linalg import gram_schmidt_against, make_rng, sym_eigendecompose
from .network import DeflatedNetwork, ScoreRatioNetwork
from .samples import JointSamples, as_samples
from .training import STREAM_INIT, TrainConfig, TrainReport, train

CDR = "cdr"
CMI = "cmi"
_FACTOR = {CDR: 0.5, CMI: 1.0}


class FullRankWarning(UserWarning):
    """No proper subspace meets the tolerance; the full space is returned."""


@dataclass(frozen=True)
class DiagnosticMatrix:
    kind: str
    matrix: np.ndarray
    n_samples: int


@dataclass(frozen=True)
class NetConfig:
    r_prime: int
    s_prime: int
    hidden_layers: int = 1
    width: int = 32

    def __post_init__(self):
        if self.r_prime < 1 or self.s_prime < 0 or self.hidden_layers < 0 or self.width < 1:
            raise ValueError("network sizes must be positive")

    def build(self, n: int, m: int, rng) -> ScoreRatioNetwork:
        return ScoreRatioNetwork.initialize(
            n, m, min(self.r_prime, n), min(self.s_prime, m), self.hidden_layers, self.width, rng
        )


@dataclass(frozen=True)
class ReductionBasis:
    kind: str
    vectors: np.ndarray  # all eigenvectors, leading first
    spectrum: np.ndarray
    rank: int
    bound: float
    warning: bool = False

    @property
    def basis(self) -> np.ndarray:
        return self.vectors[:, : self.rank]


# -- estimation ---------------------------------------------------------------


def _chunks(N, size):
    for lo in range(0, N, size):
        yield slice(lo, min(lo + size, N))


def estimate_hx(net, samples, chunk: int = 4096) -> DiagnosticMatrix:
    """``(1/N) sum_j w_j w_j^T`` over the samples."""
    data = as_samples(samples)
    if data.N == 0:
        raise EmptyBatch("no samples")
    H = np.zeros((data.n, data.n))
    for sl in _chunks(data.N, chunk):
        W = np.asarray(net.forward(data.xs[sl], data.ys[sl]))
        H += W.T @ W
    H /= data.N
    return DiagnosticMatrix(CDR, 0.5 * (H + H.T), data.N)


def estimate_hy(net, samples, chunk: int = 4096) -> DiagnosticMatrix:
    """``(1/N) sum_j (grad_y w_j)^T grad_y w_j`` over the samples."""
    data = as_samples(samples)
    if data.N == 0:
        raise EmptyBatch("no samples")
    H = np.zeros((data.m, data.m))
    if data.m:
        for sl in _chunks(data.N, chunk):
            G = np.asarray(net.observation_gradient(data.xs[sl], data.ys[sl]))
            H += np.einsum("jab,jac->bc", G, G)
        H /= data.N
    return DiagnosticMatrix(CMI, 0.5 * (H + H.T), data.N)


# -- spectra and bounds -------------------------------------------------------


def tail_bounds(spectrum, kind: str) -> np.ndarray:
    """Bound value for every truncation rank 0..d (``1/2`` tail for CDR, tail for CMI)."""
    lam = np.clip(np.asarray(spectrum, dtype=float), 0.0, None)
    tails = np.concatenate([np.cumsum(lam[::-1])[::-1], [0.0]])
    return _FACTOR[kind] * tails


def select_rank(spectrum, eps: float, kind: str) -> int:
    """Smallest ``r`` whose tail bound is below ``eps``.

    A ``FullRankWarning`` is issued when only the full dimension qualifies.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    tails = tail_bounds(spectrum, kind)
    r = int(np.argmax(tails < eps))
    if r == len(tails) - 1 and r > 0:
        warnings.warn(f"{kind} tolerance {eps:g} needs the full dimension {r}", FullRankWarning, stacklevel=2)
    return r


def _orthonormal(U, dim):
    U = np.asarray(U, dtype=float).reshape(dim, -1)
    if U.shape[1] and np.abs(U.T @ U - np.eye(U.shape[1])).max() > 1e-8:
        raise NotOrthonormal("basis columns are not orthonormal within 1e-8")
    return U


def error_bound_cdr(U_r, H) -> float:
    """``1/2 Tr((I - U U^T) H)``."""
    H = np.asarray(H, dtype=float)
    U = _orthonormal(U_r, H.shape[0])
    return 0.5 * float(np.trace(H) - np.trace(U.T @ H @ U))


def error_bound_cmi(V_s, H) -> float:
    """``Tr((I - V V^T) H)``."""
    H = np.asarray(H, dtype=float)
    V = _orthonormal(V_s, H.shape[0])
    return float(np.trace(H) - np.trace(V.T @ H @ V))


def error_curve(basis, H, kind: str) -> np.ndarray:
    """Bound for the nested bases ``basis[:, :r]``, r = 0..k."""
    f = error_bound_cdr if kind == CDR else error_bound_cmi
    basis = np.asarray(basis, dtype=float)
    return np.array([f(basis[:, :r], H) for r in range(basis.shape[1] + 1)])


def reduction_basis(H: DiagnosticMatrix | np.ndarray, eps: float, kind: str) -> ReductionBasis:
    M = H.matrix if isinstance(H, DiagnosticMatrix) else np.asarray(H, dtype=float)
    if M.shape[0] == 0:
        return ReductionBasis(kind, np.zeros((0, 0)), np.zeros(0), 0, 0.0, False)
    values, vectors = sym_eigendecompose(M)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", FullRankWarning)
        r = select_rank(values, eps, kind)
    full = any(issubclass(w.category, FullRankWarning) for w in caught)
    if full:
        warnings.warn(f"{kind} tolerance {eps:g} needs the full dimension {r}", FullRankWarning, stacklevel=2)
    return ReductionBasis(kind, vectors, values, r, float(tail_bounds(values, kind)[r]), full)


def deflate_matrix(A, Phi) -> np.ndarray:
    """``P A P`` with ``P = I - Phi Phi^T``."""
    A = np.asarray(A, dtype=float)
    P = np.eye(A.shape[0]) - Phi @ Phi.T
    return P @ A @ P


# -- drivers ------------------------------------------------------------------


@dataclass
class Algorithm1Result:
    basis_x: ReductionBasis
    basis_y: ReductionBasis
    network: ScoreRatioNetwork
    report: TrainReport
    hx: DiagnosticMatrix
    hy: DiagnosticMatrix

    def __iter__(self):
        yield self.basis_x
        yield self.basis_y
        yield self.network


def _fit_round(data, net_config, train_config, proj_x=None, proj_y=None):
    net = net_config.build(data.n, data.m, make_rng([train_config.seed, STREAM_INIT]))
    net, report = train(net, data, train_config, proj_x, proj_y)
    return net, report


def algorithm1(
    samples,
    net_config: NetConfig,
    train_config: TrainConfig,
    eps_x: float,
    eps_y: float,
    diagnostic_samples=None,
) -> Algorithm1Result:
    """Single-network reduction: train, estimate both diagnostics, select ranks.

    Diagnostics use the training samples unless ``diagnostic_samples`` is given.
    """
    data = as_samples(samples)
    net, report = _fit_round(data, net_config, train_config)
    evald = data if diagnostic_samples is None else as_samples(diagnostic_samples)
    hx = estimate_hx(net, evald)
    hy = estimate_hy(net, evald)
    return Algorithm1Result(
        reduction_basis(hx, eps_x, CDR), reduction_basis(hy, eps_y, CMI), net, report, hx, hy
    )


def _append_block(new, basis):
    # an already orthonormal first block is kept bit-for-bit
    if basis.shape[1] == 0 and np.abs(new.T @ new - np.eye(new.shape[1])).max() < 1e-12:
        return np.array(new, dtype=float)
    return gram_schmidt_against(new, basis)


@dataclass
class DeflationState:
    n: int
    m: int
    U: np.ndarray = None
    V: np.ndarray = None
    round: int = 0

    def __post_init__(self):
        self.U = np.zeros((self.n, 0)) if self.U is None else self.U
        self.V = np.zeros((self.m, 0)) if self.V is None else self.V

    @property
    def proj_x(self):
        return None if self.U.shape[1] == 0 else np.eye(self.n) - self.U @ self.U.T

    @property
    def proj_y(self):
        return None if self.V.shape[1] == 0 else np.eye(self.m) - self.V @ self.V.T

    def extend(self, new_u, new_v) -> "DeflationState":
        u = _append_block(new_u, self.U)
        v = _append_block(new_v, self.V) if self.m else np.zeros((0, 0))
        return DeflationState(self.n, self.m, np.hstack([self.U, u]), np.hstack([self.V, v]), self.round + 1)


@dataclass
class RoundRecord:
    network: ScoreRatioNetwork
    report: TrainReport
    hx: DiagnosticMatrix
    hy: DiagnosticMatrix
    proj_x: np.ndarray | None
    proj_y: np.ndarray | None


@dataclass
class Algorithm2Result:
    U: np.ndarray
    V: np.ndarray
    rounds: list = field(default_factory=list)

    def __iter__(self):
        yield self.U
        yield self.V


def algorithm2(samples, T: int, ell: int, net_config: NetConfig, train_config: TrainConfig) -> Algorithm2Result:
    """Iterative deflation: ``T`` rounds, ``ell`` new directions per side each round.

    Round ``t`` trains a fresh network with seed ``train_config.seed + t``.
    """
    data = as_samples(samples)
    if T < 1 or ell < 1:
        raise ValueError("T and ell must be >= 1")
    if ell > net_config.r_prime or (data.m and ell > net_config.s_prime):
        raise ValueError("ell must not exceed r' or s'")
    if T * ell > data.n or (data.m and T * ell > data.m):
        raise RankExhausted(f"T*ell = {T * ell} exceeds the available dimensions (n={data.n}, m={data.m})")
    state = DeflationState(data.n, data.m)
    rounds = []
    for t in range(T):
        cfg = replace(train_config, seed=train_config.seed + t)
        px, py = state.proj_x, state.proj_y
        net, report = _fit_round(data, net_config, cfg, px, py)
        wrapped = DeflatedNetwork(net, px, py) if (px is not None or py is not None) else net
        hx = estimate_hx(wrapped, data)
        hy = estimate_hy(wrapped, data)
        _, ux = sym_eigendecompose(hx.matrix)
        vy = sym_eigendecompose(hy.matrix).vectors if data.m else np.zeros((0, 0))
        state = state.extend(ux[:, :ell], vy[:, :ell] if data.m else np.zeros((0, 0)))
        rounds.append(RoundRecord(net, report, hx, hy, px, py))
    return Algorithm2Result(state.U, state.V, rounds)
