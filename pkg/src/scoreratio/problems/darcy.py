"""Desk-scale Darcy flow inverse problem on the unit square.

    -div(exp(rho) grad u) = 0,  u = 0 at xi2 = 0,  u = 1 at xi2 = 1,
    zero flux at xi1 = 0 and xi1 = 1.

Nodes sit on a uniform ``g x g`` grid; arrays are indexed ``[a, b]`` with
``xi1 = a h`` and ``xi2 = b h``. The discretization is a vertex-centred finite
volume scheme (5-point stencil) whose face transmissibilities use the harmonic
mean of the nodal permeabilities. Nodes on the Neumann sides own half cells,
so their faces along the boundary carry a factor 1/2.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from ..exceptions import DimensionMismatch, SolveFailure
from ..linalg import make_rng
from ..samples import JointSamples


@dataclass(frozen=True)
class DarcyProblem:
    grid: int = 17
    n_kl: int = 16
    delta: float = 0.5
    gamma: float = 0.1
    obs_points: tuple = field(default_factory=lambda: tuple(np.linspace(0.1, 0.9, 3)))
    noise_var: float = 1e-3

    def __post_init__(self):
        if self.grid < 3:
            raise ValueError("grid must have at least 3 nodes per side")
        if self.n_kl < 1:
            raise ValueError("n_kl must be >= 1")
        if not (self.delta > 0 and self.gamma > 0):
            raise ValueError("delta and gamma must be positive")
        if self.noise_var < 0:
            raise ValueError("noise_var must be nonnegative")
        pts = tuple(float(t) for t in self.obs_points)
        if not pts or not all(0 < t < 1 for t in pts):
            raise ValueError("observation coordinates must lie strictly inside (0, 1)")
        object.__setattr__(self, "obs_points", pts)

    @property
    def h(self) -> float:
        return 1.0 / (self.grid - 1)

    @property
    def n(self) -> int:
        return self.n_kl

    @property
    def m(self) -> int:
        return len(self.obs_points) ** 2

    @property
    def observation_locations(self) -> np.ndarray:
        """(m, 2) array of (xi1, xi2); xi1 varies slowest."""
        return np.array([(s, t) for s in self.obs_points for t in self.obs_points])


# -- discretization -----------------------------------------------------------


def _faces(g: int):
    """Node pairs and geometric factors of every face between neighbours."""
    idx = np.arange(g * g).reshape(g, g)
    # neighbours along xi1 (full faces)
    p1, q1 = idx[:-1, :].ravel(), idx[1:, :].ravel()
    w1 = np.ones(p1.size)
    # neighbours along xi2; half faces on the Neumann sides
    p2, q2 = idx[:, :-1].ravel(), idx[:, 1:].ravel()
    w2 = np.ones((g, g - 1))
    w2[0, :] = w2[-1, :] = 0.5
    return np.concatenate([p1, p2]), np.concatenate([q1, q2]), np.concatenate([w1, w2.ravel()])


def harmonic_mean(k1, k2):
    return 2.0 * k1 * k2 / (k1 + k2)


def assemble(permeability: np.ndarray) -> np.ndarray:
    """Full ``g^2 x g^2`` operator ``L`` with ``(L u)_p = sum_f T_f (u_q - u_p)``."""
    k = np.asarray(permeability, dtype=float)
    g = k.shape[0]
    p, q, w = _faces(g)
    kf = k.ravel()
    T = w * harmonic_mean(kf[p], kf[q])
    L = np.zeros((g * g, g * g))
    np.add.at(L, (p, q), T)
    np.add.at(L, (q, p), T)
    np.add.at(L, (p, p), -T)
    np.add.at(L, (q, q), -T)
    return L


def _partition(g: int):
    b = np.tile(np.arange(g), g)
    interior = np.flatnonzero((b > 0) & (b < g - 1))
    boundary = np.flatnonzero((b == 0) | (b == g - 1))
    u_bnd = (b[boundary] == g - 1).astype(float)
    return interior, boundary, u_bnd


@dataclass
class DarcySolution:
    pressure: np.ndarray  # (g, g)
    permeability: np.ndarray
    lu: tuple
    interior: np.ndarray


def _solve(log_permeability) -> DarcySolution:
    rho = np.asarray(log_permeability, dtype=float)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1] or rho.shape[0] < 3:
        raise DimensionMismatch(f"expected a square nodal field with >= 3 nodes per side, got {rho.shape}")
    if not np.all(np.isfinite(rho)):
        raise SolveFailure("log-permeability field is not finite")
    g = rho.shape[0]
    k = np.exp(rho)
    L = assemble(k)
    I, D, u_D = _partition(g)
    M = L[np.ix_(I, I)]
    rhs = -L[np.ix_(I, D)] @ u_D
    try:
        lu = lu_factor(M, check_finite=True)
        u_I = lu_solve(lu, rhs)
    except (ValueError, np.linalg.LinAlgError) as exc:
        raise SolveFailure(str(exc)) from exc
    res = np.linalg.norm(M @ u_I - rhs)
    if not np.isfinite(res) or res >= 1e-10 * np.linalg.norm(rhs):
        raise SolveFailure(f"linear solve residual {res:.3e} exceeds tolerance")
    u = np.empty(g * g)
    u[I] = u_I
    u[D] = u_D
    return DarcySolution(u.reshape(g, g), k, lu, I)


def solve_darcy(p: DarcyProblem | None, log_permeability) -> np.ndarray:
    """Nodal pressure field (g, g) for a nodal log-permeability field."""
    rho = np.asarray(log_permeability, dtype=float)
    if p is not None and rho.shape != (p.grid, p.grid):
        raise DimensionMismatch(f"field must be {p.grid}x{p.grid}, got {rho.shape}")
    return _solve(rho).pressure


# -- prior --------------------------------------------------------------------


def kl_modes(p: DarcyProblem) -> tuple[np.ndarray, np.ndarray, list[tuple[int, int]]]:
    """Leading eigenpairs of ``(delta I - gamma Laplacian)^-2`` with Neumann conditions.

    Returns eigenvalues (descending), nodal eigenfunctions of shape
    (n_kl, g, g) and the (k, l) wavenumbers. Eigenfunctions are
    ``c_k c_l cos(pi k xi1) cos(pi l xi2)`` with ``c_0 = 1``, ``c_k = sqrt 2``,
    unit norm in L2 of the square.
    """
    K = int(np.ceil(np.sqrt(p.n_kl))) + 1
    cand = []
    for k in range(K + 1):
        for l in range(K + 1):
            lam = (p.delta + p.gamma * np.pi**2 * (k * k + l * l)) ** -2
            cand.append((-lam, k, l))
    cand.sort()
    chosen = cand[: p.n_kl]
    xi = np.linspace(0.0, 1.0, p.grid)
    c = lambda j: 1.0 if j == 0 else np.sqrt(2.0)
    values = np.array([-t[0] for t in chosen])
    funcs = np.stack([c(k) * c(l) * np.outer(np.cos(np.pi * k * xi), np.cos(np.pi * l * xi)) for _, k, l in chosen])
    return values, funcs, [(k, l) for _, k, l in chosen]


def log_permeability(p: DarcyProblem, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (p.n_kl,):
        raise DimensionMismatch(f"x must have length {p.n_kl}")
    values, funcs, _ = _modes(p)
    return np.tensordot(x * np.sqrt(values), funcs, axes=1)


def _modes(p):
    cache = _MODE_CACHE.get(p)
    if cache is None:
        cache = _MODE_CACHE[p] = kl_modes(p)
    return cache


_MODE_CACHE: dict = {}
_OBS_CACHE: dict = {}


def observation_matrix(p: DarcyProblem) -> np.ndarray:
    """Bilinear interpolation weights (m, g^2) from nodal values to observation points."""
    B = _OBS_CACHE.get(p)
    if B is not None:
        return B
    g, h = p.grid, p.h
    B = np.zeros((p.m, g * g))
    for i, (s, t) in enumerate(p.observation_locations):
        a = min(int(s / h), g - 2)
        b = min(int(t / h), g - 2)
        fs, ft = s / h - a, t / h - b
        for da, db, wgt in ((0, 0, (1 - fs) * (1 - ft)), (1, 0, fs * (1 - ft)), (0, 1, (1 - fs) * ft), (1, 1, fs * ft)):
            B[i, (a + da) * g + (b + db)] += wgt
    _OBS_CACHE[p] = B
    return B


def forward_map(p: DarcyProblem, x) -> np.ndarray:
    """Noiseless observations ``F(x)``."""
    u = _solve(log_permeability(p, x)).pressure
    return observation_matrix(p) @ u.ravel()


def forward_jacobian(p: DarcyProblem, x) -> tuple[np.ndarray, np.ndarray]:
    """``F(x)`` and ``dF/dx`` (m, n_kl) by direct sensitivity analysis.

    Differentiating ``(L(k) u)_I = 0`` gives ``M_II du_I = -dR_I`` where
    ``dR_p = sum_f dT_f (u_q - u_p)`` collects the transmissibility changes.
    """
    values, funcs, _ = _modes(p)
    sol = _solve(log_permeability(p, x))
    g = p.grid
    k = sol.permeability.ravel()
    u = sol.pressure.ravel()
    P, Q, w = _faces(g)
    # dk_node/dx_i = k * sqrt(lam_i) * phi_i
    dk = (np.sqrt(values)[:, None] * funcs.reshape(p.n_kl, -1)) * k  # (n_kl, g^2)
    s = (k[P] + k[Q]) ** 2
    dT = w * (2 * k[Q] ** 2 / s * dk[:, P] + 2 * k[P] ** 2 / s * dk[:, Q])  # (n_kl, faces)
    flux = dT * (u[Q] - u[P])
    dR = np.zeros((p.n_kl, g * g))
    np.add.at(dR.T, P, flux.T)
    np.add.at(dR.T, Q, -flux.T)
    du_I = lu_solve(sol.lu, -dR[:, sol.interior].T)  # (|I|, n_kl)
    B = observation_matrix(p)
    return B @ u, B[:, sol.interior] @ du_I


def sample_darcy(p: DarcyProblem, N: int, seed: int, start: int = 0) -> JointSamples:
    """Draw ``N`` joint samples; draw ``j`` uses the substream ``[seed, start + j]``."""
    if N < 1:
        raise ValueError("N must be >= 1")
    if isinstance(seed, np.random.Generator):
        seed = int(seed.integers(2**63))
    B = observation_matrix(p)
    sd = np.sqrt(p.noise_var)
    X = np.empty((N, p.n))
    Y = np.empty((N, p.m))
    for j in range(N):
        rng = make_rng([seed, start + j])
        X[j] = rng.standard_normal(p.n)
        noise = rng.standard_normal(p.m)
        Y[j] = B @ _solve(log_permeability(p, X[j])).pressure.ravel() + sd * noise
    return JointSamples(X, Y)


def darcy_true_diagnostics(p: DarcyProblem, N_mc: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Monte Carlo ``E[J^T G^-1 J]`` and ``E[G^-1 J J^T G^-1]`` over the prior."""
    Hx = np.zeros((p.n, p.n))
    Hy = np.zeros((p.m, p.m))
    prec = 1.0 / p.noise_var
    for j in range(N_mc):
        x = make_rng([seed, j]).standard_normal(p.n)
        _, J = forward_jacobian(p, x)
        Hx += prec * J.T @ J
        Hy += prec**2 * J @ J.T
    Hx /= N_mc
    Hy /= N_mc
    return 0.5 * (Hx + Hx.T), 0.5 * (Hy + Hy.T)


class DarcyRatio:
    """Analytic score ratio ``J(x)^T Gamma^-1 (y - F(x))`` with the network interface."""

    def __init__(self, p: DarcyProblem):
        self.problem = p
        self.n, self.m = p.n, p.m

    def forward(self, X, Y):
        out = np.empty((len(X), self.n))
        for j, (x, y) in enumerate(zip(np.asarray(X), np.asarray(Y))):
            F, J = forward_jacobian(self.problem, x)
            out[j] = J.T @ (y - F) / self.problem.noise_var
        return out

    __call__ = forward

    def observation_gradient(self, X, Y=None):
        return np.stack([forward_jacobian(self.problem, x)[1].T / self.problem.noise_var for x in np.asarray(X)])
