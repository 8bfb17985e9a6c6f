"""Dense linear algebra kernels.

Symmetric eigendecomposition by cyclic Jacobi rotations and a thin SVD by
one-sided (Hestenes) Jacobi. Both are written for the small matrices that
appear in this package (a few hundred rows at most) and return results with
a deterministic sign convention so bases can be compared across runs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import NoConvergence, NonSymmetric

MAX_SWEEPS = 100


def make_rng(seed) -> np.random.Generator:
    """Return a PCG64-backed generator; ``seed`` may be an int or a sequence of ints."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.PCG64(seed))


@dataclass(frozen=True)
class EigenPairs:
    values: np.ndarray
    vectors: np.ndarray

    def __iter__(self):
        yield self.values
        yield self.vectors


@dataclass(frozen=True)
class SvdResult:
    left: np.ndarray
    singulars: np.ndarray
    right: np.ndarray

    def rank(self, rtol: float = 1e-12) -> int:
        if self.singulars.size == 0 or self.singulars[0] == 0.0:
            return 0
        return int(np.sum(self.singulars > rtol * self.singulars[0]))


def _fix_signs(vectors: np.ndarray) -> np.ndarray:
    # largest-magnitude entry of each column made positive; argmax takes the lowest index on ties
    if vectors.size == 0:
        return vectors
    idx = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[idx, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs


def sym_eigendecompose(M, tol: float = 1e-12, max_sweeps: int = MAX_SWEEPS) -> EigenPairs:
    """Eigendecomposition of a real symmetric matrix by cyclic Jacobi rotations.

    Parameters
    ----------
    M : array_like, shape (d, d)
        Symmetric matrix. Asymmetry beyond ``1e-10`` relative raises ``NonSymmetric``.
    tol : float
        Sweeps stop once the off-diagonal Frobenius norm drops below
        ``tol * ||M||_F``.

    Returns
    -------
    EigenPairs
        Eigenvalues in descending order and orthonormal eigenvectors as columns.
    """
    A = np.array(M, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise NonSymmetric(f"expected a square matrix, got shape {A.shape}")
    if tol <= 0:
        raise ValueError("tol must be positive")
    d = A.shape[0]
    scale = np.linalg.norm(A)
    if np.linalg.norm(A - A.T) > 1e-10 * max(scale, np.finfo(float).tiny):
        raise NonSymmetric("matrix is not symmetric within 1e-10 relative")
    A = 0.5 * (A + A.T)
    V = np.eye(d)
    if d > 1 and scale > 0:
        threshold = tol * scale
        for _ in range(max_sweeps):
            off = np.linalg.norm(A - np.diag(np.diag(A)))
            if off <= threshold:
                break
            for p in range(d - 1):
                for q in range(p + 1, d):
                    apq = A[p, q]
                    if abs(apq) <= 1e-300:
                        continue
                    theta = (A[q, q] - A[p, p]) / (2.0 * apq)
                    t = np.copysign(1.0, theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                    c = 1.0 / np.sqrt(t * t + 1.0)
                    s = t * c
                    colp = A[:, p].copy()
                    colq = A[:, q]
                    A[:, p] = c * colp - s * colq
                    A[:, q] = s * colp + c * colq
                    rowp = A[p, :].copy()
                    rowq = A[q, :]
                    A[p, :] = c * rowp - s * rowq
                    A[q, :] = s * rowp + c * rowq
                    A[p, q] = A[q, p] = 0.0
                    vp = V[:, p].copy()
                    vq = V[:, q]
                    V[:, p] = c * vp - s * vq
                    V[:, q] = s * vp + c * vq
        else:
            raise NoConvergence(f"Jacobi iteration did not converge in {max_sweeps} sweeps")
    values = np.diag(A).copy()
    order = np.argsort(-values, kind="stable")
    return EigenPairs(values[order], _fix_signs(V[:, order]))


def _complete_basis(Q: np.ndarray, total: int) -> np.ndarray:
    """Extend orthonormal columns ``Q`` (rows x k) to ``total`` columns with canonical vectors."""
    rows = Q.shape[0]
    cols = [Q[:, j] for j in range(Q.shape[1])]
    for i in range(rows):
        if len(cols) >= total:
            break
        v = np.zeros(rows)
        v[i] = 1.0
        for _ in range(2):
            for c in cols:
                v -= (c @ v) * c
        norm = np.linalg.norm(v)
        if norm > 1e-8:
            cols.append(v / norm)
    return np.column_stack(cols) if cols else np.zeros((rows, 0))


def thin_svd(W, max_sweeps: int = MAX_SWEEPS) -> SvdResult:
    """Thin SVD ``W = left @ diag(singulars) @ right.T`` via one-sided Jacobi.

    Columns are orthogonalized directly (no Gram matrix), so small singular
    values keep absolute accuracy near machine precision relative to the
    largest one.
    """
    W = np.array(W, dtype=float)
    if W.ndim != 2 or W.size == 0:
        raise ValueError(f"expected a nonempty matrix, got shape {W.shape}")
    transposed = W.shape[0] < W.shape[1]
    U = W.T.copy() if transposed else W.copy()
    k = U.shape[1]
    V = np.eye(k)
    eps = 1e-15
    # columns below this squared norm are roundoff and are left alone
    negligible = (eps * np.linalg.norm(W)) ** 2
    for _ in range(max_sweeps):
        rotated = False
        for p in range(k - 1):
            for q in range(p + 1, k):
                up = U[:, p]
                uq = U[:, q]
                alpha = up @ up
                beta = uq @ uq
                gamma = up @ uq
                if min(alpha, beta) <= negligible or abs(gamma) <= eps * np.sqrt(alpha * beta):
                    continue
                rotated = True
                zeta = (beta - alpha) / (2.0 * gamma)
                if abs(zeta) > 1e150:
                    t = 0.5 / zeta
                else:
                    t = np.copysign(1.0, zeta) / (abs(zeta) + np.sqrt(1.0 + zeta * zeta))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = c * t
                up = up.copy()
                U[:, p] = c * up - s * uq
                U[:, q] = s * up + c * uq
                vp = V[:, p].copy()
                vq = V[:, q]
                V[:, p] = c * vp - s * vq
                V[:, q] = s * vp + c * vq
        if not rotated:
            break
    else:
        raise NoConvergence(f"one-sided Jacobi did not converge in {max_sweeps} sweeps")

    sig = np.linalg.norm(U, axis=0)
    order = np.argsort(-sig, kind="stable")
    sig = sig[order]
    U = U[:, order]
    V = V[:, order]
    cutoff = 1e-12 * sig[0] if sig[0] > 0 else 0.0
    rank = int(np.sum(sig > cutoff)) if sig[0] > 0 else 0
    left = U[:, :rank] / sig[:rank]
    left = _complete_basis(left, k)
    sig[rank:] = 0.0
    # sign convention on the right factor, carried over to the left
    idx = np.argmax(np.abs(V), axis=0)
    signs = np.sign(V[idx, np.arange(k)])
    signs[signs == 0] = 1.0
    V = V * signs
    left = left * signs
    if transposed:
        return SvdResult(V, sig, left)
    return SvdResult(left, sig, V)


def random_rotation(d: int, rng) -> np.ndarray:
    """Haar-distributed orthogonal matrix from the QR factorization of a Gaussian matrix.

    The triangular factor's diagonal is made positive so the result is unique
    for a given draw.
    """
    if d < 1:
        raise ValueError("d must be >= 1")
    rng = make_rng(rng)
    G = rng.standard_normal((d, d))
    Q, R = np.linalg.qr(G)
    signs = np.sign(np.diag(R))
    signs[signs == 0] = 1.0
    return Q * signs


def orthonormal_complement_projector(basis: np.ndarray, dim: int) -> np.ndarray:
    """``I - B B^T`` for orthonormal columns ``B`` (dim x k)."""
    basis = np.asarray(basis, dtype=float).reshape(dim, -1)
    return np.eye(dim) - basis @ basis.T


def principal_angles(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Principal angles (radians, ascending) between the column spans of ``A`` and ``B``."""
    Qa, _ = np.linalg.qr(np.asarray(A, dtype=float))
    Qb, _ = np.linalg.qr(np.asarray(B, dtype=float))
    cosines = thin_svd(Qa.T @ Qb).singulars
    return np.arccos(np.clip(cosines, -1.0, 1.0))


def gram_schmidt_against(new: np.ndarray, basis: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """Modified Gram-Schmidt of the columns of ``new`` against ``basis`` and each other.

    Columns that become numerically dependent are dropped.
    """
    dim = new.shape[0]
    kept = [basis[:, j] for j in range(basis.shape[1])] if basis.size else []
    n_prev = len(kept)
    for j in range(new.shape[1]):
        v = new[:, j].astype(float).copy()
        norm0 = np.linalg.norm(v)
        for _ in range(2):
            for c in kept:
                v -= (c @ v) * c
        norm = np.linalg.norm(v)
        if norm0 > 0 and norm > tol * norm0:
            kept.append(v / norm)
    out = kept[n_prev:]
    return np.column_stack(out) if out else np.zeros((dim, 0))
