"""Ridge-structured score-ratio network ``w(x, y) = W_x psi(W_x^T x, W_y^T y)``.

The network works on batches: ``X`` has shape (N, n) and ``Y`` shape (N, m).
Every method that feeds the training objective is written with the generic
primitives of :mod:`scoreratio.autodiff`, so the same code evaluates plain
arrays or records onto a tape when the parameters are tape leaves.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import MlpParams
from .exceptions import DimensionMismatch, MalformedCheckpoint, NotProjector

CHECKPOINT_SCHEMA = "scoreratio-checkpoint/1"
FLATTENING_ORDER = "W_x, W_y, then psi layer-major with weights before biases; row-major"


def _as_batch(a, width: int, name: str) -> tuple[np.ndarray, bool]:
    a = np.asarray(a, dtype=float)
    single = a.ndim == 1
    if single:
        a = a.reshape(1, -1)
    if a.ndim != 2 or a.shape[1] != width:
        raise DimensionMismatch(f"{name} must have {width} columns, got shape {a.shape}")
    return a, single


@dataclass
class ScoreRatioNetwork:
    W_x: object
    W_y: object
    psi: MlpParams

    def __post_init__(self):
        n, r = np.shape(ad.value(self.W_x))
        m, s = np.shape(ad.value(self.W_y))
        if r > n or s > m:
            raise DimensionMismatch(f"need r' <= n and s' <= m, got r'={r}, n={n}, s'={s}, m={m}")
        widths = self.psi.widths
        if widths[0] != r + s or widths[-1] != r:
            raise DimensionMismatch(
                f"psi must map R^{r + s} -> R^{r}, got R^{widths[0]} -> R^{widths[-1]}"
            )

    @property
    def n(self) -> int:
        return np.shape(ad.value(self.W_x))[0]

    @property
    def m(self) -> int:
        return np.shape(ad.value(self.W_y))[0]

    @property
    def r_prime(self) -> int:
        return np.shape(ad.value(self.W_x))[1]

    @property
    def s_prime(self) -> int:
        return np.shape(ad.value(self.W_y))[1]

    @classmethod
    def initialize(cls, n, m, r_prime, s_prime, hidden_layers=1, width=32, rng=None):
        """Orthonormal ``W_x``/``W_y`` from QR of Gaussians; zero output layer so ``w`` starts at 0."""
        rng = rng if rng is not None else np.random.default_rng()
        W_x = _orthonormal_columns(n, r_prime, rng)
        W_y = _orthonormal_columns(m, s_prime, rng)
        widths = [r_prime + s_prime] + [width] * hidden_layers + [r_prime]
        return cls(W_x, W_y, MlpParams.initialize(widths, rng, zero_last=True))

    # -- parameter plumbing --------------------------------------------------

    def arrays(self) -> list:
        return [self.W_x, self.W_y] + self.psi.arrays()

    @property
    def size(self) -> int:
        return sum(np.size(ad.value(a)) for a in self.arrays())

    def flatten(self) -> np.ndarray:
        return np.concatenate([np.ravel(ad.value(a)) for a in self.arrays()])

    def with_flat(self, flat) -> "ScoreRatioNetwork":
        flat = np.asarray(flat, dtype=float)
        if flat.shape != (self.size,):
            raise DimensionMismatch(f"expected {self.size} parameters, got {flat.shape}")
        nx, ny = np.size(self.W_x), np.size(self.W_y)
        W_x = flat[:nx].reshape(np.shape(self.W_x)).copy()
        W_y = flat[nx : nx + ny].reshape(np.shape(self.W_y)).copy()
        return ScoreRatioNetwork(W_x, W_y, self.psi.with_flat(flat[nx + ny :]))

    def record(self, tape: ad.Tape) -> "ScoreRatioNetwork":
        return ScoreRatioNetwork(tape.leaf(ad.value(self.W_x)), tape.leaf(ad.value(self.W_y)), self.psi.record(tape))

    def detach(self) -> "ScoreRatioNetwork":
        return self.with_flat(self.flatten())

    # -- evaluation ----------------------------------------------------------

    def _inputs(self, X, Y):
        X, single = _as_batch(X, self.n, "x")
        if Y is None:
            Y = np.zeros((X.shape[0], self.m))
        Y, _ = _as_batch(Y, self.m, "y")
        if Y.shape[0] != X.shape[0]:
            raise DimensionMismatch("x and y batches differ in length")
        return X, Y, single

    def _reduced(self, X, Y, proj_y=None):
        if proj_y is not None:
            Y = Y @ proj_y
        return ad.concat([X @ self.W_x, Y @ self.W_y], axis=-1)

    def evaluate(self, X, Y=None, proj_x=None, proj_y=None, trace=None, directions=None):
        """Score ratio on a batch and, optionally, its input-Jacobian trace.

        Parameters
        ----------
        trace : {None, "exact", "sliced"}
            ``"exact"`` uses r' forward-mode passes through psi and the identity
            ``Tr(grad_x w) = Tr(W_x^T P W_x J_psi)``. ``"sliced"`` averages
            ``v^T (grad_x w) v`` over ``directions`` of shape (k, N, n).

        Returns
        -------
        w : (N, n) array or node
        tr : (N,) array or node, or None
        """
        X, Y, _ = self._inputs(X, Y)
        z = self._reduced(X, Y, proj_y)
        r, s = self.r_prime, self.s_prime
        if trace is None:
            psi = ad.mlp_forward(self.psi, z)
            tr = None
        elif trace == "exact":
            seeds = np.zeros((r, 1, r + s))
            seeds[np.arange(r), 0, np.arange(r)] = 1.0
            dual = ad.mlp_dual(self.psi, z, seeds)
            psi, dpsi = dual.primal, dual.tangent
            PW = self.W_x if proj_x is None else proj_x @ self.W_x
            gram = ad.transpose(self.W_x) @ PW
            tr = ad.sum_(dpsi * ad.reshape(gram, (r, 1, r)), axis=(0, 2)) + np.zeros(X.shape[0])
        elif trace == "sliced":
            V = np.asarray(directions, dtype=float)
            if V.ndim != 3 or V.shape[1:] != X.shape:
                raise DimensionMismatch(f"directions must have shape (k, {X.shape[0]}, {self.n})")
            tangent_x = V @ self.W_x
            tangent = ad.concat([tangent_x, np.zeros(V.shape[:2] + (s,))], axis=-1)
            dual = ad.mlp_dual(self.psi, z, tangent)
            psi, dpsi = dual.primal, dual.tangent
            left = tangent_x if proj_x is None else (V @ proj_x) @ self.W_x
            tr = ad.mean(ad.sum_(left * dpsi, axis=-1), axis=0)
        else:
            raise ValueError(f"unknown trace mode {trace!r}")
        w = psi @ ad.transpose(self.W_x)
        if proj_x is not None:
            w = w @ proj_x
        return w, tr

    def forward(self, X, Y=None):
        X_, _, single = self._inputs(X, Y)
        w, _ = self.evaluate(X_, Y)
        return w[0] if single else w

    __call__ = forward

    def reduced_input_jacobian(self, X, Y=None):
        """``d psi / d z_x`` at ``(W_x^T x, W_y^T y)``; shape (N, r', r') or (r', r')."""
        X, Y, single = self._inputs(X, Y)
        r, s = self.r_prime, self.s_prime
        seeds = np.zeros((r, 1, r + s))
        seeds[np.arange(r), 0, np.arange(r)] = 1.0
        dpsi = ad.value(ad.mlp_dual(self.psi, ad.value(self._reduced(X, Y)), seeds).tangent)
        dpsi = np.broadcast_to(dpsi, (r, X.shape[0], r))  # tangents stay unbatched when psi is linear
        J = np.transpose(dpsi, (1, 2, 0))
        return J[0] if single else J

    def input_jacobian_trace(self, X, Y=None, proj_x=None, proj_y=None):
        X, Y, single = self._inputs(X, Y)
        _, tr = self.evaluate(X, Y, proj_x, proj_y, trace="exact")
        tr = ad.value(tr)
        return tr[0] if single else tr

    def observation_gradient(self, X, Y=None, proj_x=None, proj_y=None):
        """``grad_y w = P_x W_x (d psi / d z_y) W_y^T P_y``; shape (N, n, m) or (n, m)."""
        X, Y, single = self._inputs(X, Y)
        r, s = self.r_prime, self.s_prime
        N = X.shape[0]
        if s == 0:
            out = np.zeros((N, self.n, self.m))
            return out[0] if single else out
        seeds = np.zeros((s, 1, r + s))
        seeds[np.arange(s), 0, r + np.arange(s)] = 1.0
        z = ad.value(self._reduced(X, Y, proj_y))
        dpsi = np.broadcast_to(ad.value(ad.mlp_dual(self.psi, z, seeds).tangent), (s, N, r))
        Wx = ad.value(self.W_x)
        Wy = ad.value(self.W_y)
        if proj_x is not None:
            Wx = proj_x @ Wx
        if proj_y is not None:
            Wy = proj_y @ Wy
        out = np.einsum("ai,lji,bl->jab", Wx, dpsi, Wy, optimize=True)
        return out[0] if single else out


def _orthonormal_columns(rows: int, cols: int, rng) -> np.ndarray:
    if cols == 0:
        return np.zeros((rows, 0))
    Q, R = np.linalg.qr(rng.standard_normal((rows, cols)))
    signs = np.sign(np.diag(R))
    signs[signs == 0] = 1.0
    return Q * signs


def _check_projector(P, dim: int, name: str) -> np.ndarray:
    P = np.asarray(P, dtype=float)
    if P.shape != (dim, dim):
        raise NotProjector(f"{name} must be {dim}x{dim}, got {P.shape}")
    if dim and (np.abs(P - P.T).max() > 1e-10 or np.abs(P @ P - P).max() > 1e-10):
        raise NotProjector(f"{name} is not a symmetric idempotent matrix")
    return P


@dataclass
class DeflatedNetwork:
    """``w_P(x, y) = P_x w(x, P_y y)`` around an inner :class:`ScoreRatioNetwork`.

    A projector of ``None`` stands for the identity and is skipped entirely.
    """

    inner: ScoreRatioNetwork
    proj_x: np.ndarray | None = None
    proj_y: np.ndarray | None = None

    def __post_init__(self):
        if self.proj_x is not None:
            self.proj_x = _check_projector(self.proj_x, self.inner.n, "proj_x")
        if self.proj_y is not None:
            self.proj_y = _check_projector(self.proj_y, self.inner.m, "proj_y")

    @property
    def n(self):
        return self.inner.n

    @property
    def m(self):
        return self.inner.m

    def arrays(self):
        return self.inner.arrays()

    def flatten(self):
        return self.inner.flatten()

    def with_flat(self, flat):
        return DeflatedNetwork(self.inner.with_flat(flat), self.proj_x, self.proj_y)

    def record(self, tape):
        return DeflatedNetwork(self.inner.record(tape), self.proj_x, self.proj_y)

    @property
    def W_x(self):
        return self.inner.W_x

    @property
    def W_y(self):
        return self.inner.W_y

    def evaluate(self, X, Y=None, trace=None, directions=None):
        return self.inner.evaluate(X, Y, self.proj_x, self.proj_y, trace=trace, directions=directions)

    def forward(self, X, Y=None):
        X_, _, single = self.inner._inputs(X, Y)
        w, _ = self.evaluate(X_, Y)
        return w[0] if single else w

    __call__ = forward

    def input_jacobian_trace(self, X, Y=None):
        return self.inner.input_jacobian_trace(X, Y, self.proj_x, self.proj_y)

    def observation_gradient(self, X, Y=None):
        return self.inner.observation_gradient(X, Y, self.proj_x, self.proj_y)


def deflate_network(net: ScoreRatioNetwork, proj_x, proj_y) -> DeflatedNetwork:
    return DeflatedNetwork(net, proj_x, proj_y)


# -- checkpoints --------------------------------------------------------------


def checkpoint_dict(net: ScoreRatioNetwork) -> dict:
    psi = net.psi
    return {
        "schema": CHECKPOINT_SCHEMA,
        "n": net.n,
        "m": net.m,
        "r_prime": net.r_prime,
        "s_prime": net.s_prime,
        "psi_widths": psi.widths,
        "activation": psi.activation,
        "flattening_order": FLATTENING_ORDER,
        "W_x": np.asarray(net.W_x).tolist(),
        "W_y": np.asarray(net.W_y).tolist(),
        "psi_weights": [np.asarray(W).tolist() for W in psi.weights],
        "psi_biases": [np.asarray(b).tolist() for b in psi.biases],
    }


def save_checkpoint(net: ScoreRatioNetwork, path) -> None:
    """Write ``net`` as a JSON document. Floats use the shortest round-trip repr."""
    text = json.dumps(checkpoint_dict(net), indent=1, sort_keys=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text + "\n")


def _matrix(data, rows, cols, name):
    arr = np.array(data, dtype=float)
    if rows == 0 or cols == 0:
        arr = arr.reshape(rows, cols) if arr.size == 0 else arr
    if arr.shape != (rows, cols):
        raise MalformedCheckpoint(f"{name} has shape {arr.shape}, expected {(rows, cols)}")
    return arr


def load_checkpoint(path) -> ScoreRatioNetwork:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise MalformedCheckpoint(f"{os.fspath(path)}: {exc}") from exc
    return network_from_dict(doc)


def network_from_dict(doc: dict) -> ScoreRatioNetwork:
    try:
        if doc["schema"] != CHECKPOINT_SCHEMA:
            raise MalformedCheckpoint(f"unsupported schema {doc['schema']!r}")
        n, m, r, s = (int(doc[k]) for k in ("n", "m", "r_prime", "s_prime"))
        if r > n or s > m or min(n, m, r, s) < 0:
            raise MalformedCheckpoint(f"invalid dimensions n={n}, m={m}, r'={r}, s'={s}")
        widths = [int(w) for w in doc["psi_widths"]]
        W_x = _matrix(doc["W_x"], n, r, "W_x")
        W_y = _matrix(doc["W_y"], m, s, "W_y")
        weights = [
            _matrix(W, widths[k], widths[k + 1], f"psi_weights[{k}]") for k, W in enumerate(doc["psi_weights"])
        ]
        biases = [np.array(b, dtype=float).reshape(-1) for b in doc["psi_biases"]]
        if len(weights) != len(widths) - 1:
            raise MalformedCheckpoint("number of psi layers does not match psi_widths")
        psi = MlpParams(weights, biases, doc.get("activation", "tanh"))
        arrays = [W_x, W_y] + psi.arrays()
        if not all(np.all(np.isfinite(a)) for a in arrays):
            raise MalformedCheckpoint("non-finite parameter values")
        return ScoreRatioNetwork(W_x, W_y, psi)
    except KeyError as exc:
        raise MalformedCheckpoint(f"missing field {exc}") from exc
    except (TypeError, ValueError) as exc:
        if isinstance(exc, MalformedCheckpoint):
            raise
        raise MalformedCheckpoint(str(exc)) from exc
