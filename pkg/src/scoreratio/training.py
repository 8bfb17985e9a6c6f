"""Minibatch Adam training of a score-ratio network."""

from __future__ import annotations

import hashlib
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import objective as ob
from .exceptions import DimensionMismatch, EmptyBatch, NonFiniteGradient, NonFiniteLoss
from .linalg import make_rng
from .network import DeflatedNetwork
from .samples import as_samples

logger = logging.getLogger(__name__)

# substream ids under the run seed
STREAM_SHUFFLE = 0
STREAM_SLICING = 1
STREAM_SPLIT = 2
STREAM_INIT = 3


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 5e-3
    batch_size: int = 1000
    epochs: int = 100
    lambda_x: float | None = None  # None -> 1/n
    lambda_y: float | None = None  # None -> 1/m
    trace_mode: str = "exact"
    n_projections: int = 100
    seed: int = 0
    validation_fraction: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float | None = 100.0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if not 0 <= self.validation_fraction < 1:
            raise ValueError("validation_fraction must lie in [0, 1)")
        if self.trace_mode not in ("exact", "sliced"):
            raise ValueError(f"trace_mode must be 'exact' or 'sliced', got {self.trace_mode!r}")
        if self.n_projections < 1:
            raise ValueError("n_projections must be >= 1")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1 and self.eps > 0):
            raise ValueError("invalid Adam constants")
        for lam in (self.lambda_x, self.lambda_y):
            if lam is not None and lam < 0:
                raise ValueError("regularization weights must be nonnegative")
        if self.clip_norm is not None and not self.clip_norm > 0:
            raise ValueError("clip_norm must be positive or None")

    def lambdas(self, n: int, m: int) -> tuple[float, float]:
        dx, dy = ob.default_lambdas(n, m)
        lx = dx if self.lambda_x is None else self.lambda_x
        ly = dy if self.lambda_y is None else self.lambda_y
        return lx, (ly if m else 0.0)


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def zeros(cls, size: int) -> "AdamState":
        return cls(np.zeros(size), np.zeros(size), 0)


def adam_step(state: AdamState, params, grad, cfg: TrainConfig) -> tuple[AdamState, np.ndarray]:
    params = np.asarray(params, dtype=float)
    grad = np.asarray(grad, dtype=float)
    if params.shape != grad.shape or state.m.shape != params.shape:
        raise DimensionMismatch(f"params {params.shape}, grad {grad.shape}, state {state.m.shape}")
    if not np.all(np.isfinite(grad)):
        raise NonFiniteGradient(f"non-finite gradient at Adam step {state.step + 1}")
    t = state.step + 1
    m = cfg.beta1 * state.m + (1 - cfg.beta1) * grad
    v = cfg.beta2 * state.v + (1 - cfg.beta2) * grad * grad
    m_hat = m / (1 - cfg.beta1**t)
    v_hat = v / (1 - cfg.beta2**t)
    params = params - cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.eps)
    return AdamState(m, v, t), params


@dataclass
class TrainReport:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    wall_time: float = 0.0
    best_epoch: int | None = None
    snapshot_id: str = ""
    steps: int = 0


def snapshot_id(flat: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(flat, dtype="<f8").tobytes()).hexdigest()[:16]


def split_indices(N: int, fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Disjoint (train, validation) index sets; validation is empty when ``fraction == 0``."""
    n_val = int(fraction * N)
    if fraction > 0 and N > 1:
        n_val = min(max(n_val, 1), N - 1)
    perm = make_rng([seed, STREAM_SPLIT]).permutation(N)
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


def train(net, samples, cfg: TrainConfig, proj_x=None, proj_y=None):
    """Fit ``net`` to ``samples`` with Adam on the regularized implicit objective.

    With projectors the deflated network ``P_x w(x, P_y y)`` is trained; the
    returned network is always the undeflated inner one.

    Returns
    -------
    net : ScoreRatioNetwork
        Snapshot with the lowest validation loss, or the final one without a
        validation split.
    report : TrainReport
    """
    start = time.perf_counter()
    data = as_samples(samples)
    if data.N == 0:
        raise EmptyBatch("no training samples")
    if data.n != net.n or data.m != net.m:
        raise DimensionMismatch(f"samples are ({data.n}, {data.m}), network is ({net.n}, {net.m})")
    report = TrainReport()
    wrap = (lambda inner: DeflatedNetwork(inner, proj_x, proj_y)) if (proj_x is not None or proj_y is not None) else (lambda inner: inner)
    if cfg.epochs == 0:
        report.snapshot_id = snapshot_id(net.flatten())
        report.wall_time = time.perf_counter() - start
        return net, report

    lam_x, lam_y = cfg.lambdas(net.n, net.m)
    train_idx, val_idx = split_indices(data.N, cfg.validation_fraction, cfg.seed)
    Xt, Yt = data.xs[train_idx], data.ys[train_idx]
    Xv, Yv = data.xs[val_idx], data.ys[val_idx]
    shuffle_rng = make_rng([cfg.seed, STREAM_SHUFFLE])
    slice_rng = make_rng([cfg.seed, STREAM_SLICING])

    params = net.flatten()
    state = AdamState.zeros(params.size)
    best = (np.inf, params.copy(), None)
    n_train = Xt.shape[0]
    for epoch in range(cfg.epochs):
        order = shuffle_rng.permutation(n_train)
        totals, weights = [], []
        for lo in range(0, n_train, cfg.batch_size):
            idx = order[lo : lo + cfg.batch_size]
            current = wrap(net.with_flat(params))
            loss, g = ob.objective_and_gradient(
                current, Xt[idx], Yt[idx], lambda_x=lam_x, lambda_y=lam_y,
                trace_mode=cfg.trace_mode, n_projections=cfg.n_projections, rng=slice_rng,
            )
            if not np.isfinite(loss.total):
                raise NonFiniteLoss(
                    f"non-finite loss at step {state.step + 1}", step=state.step + 1, terms=loss.as_dict()
                )
            if cfg.clip_norm is not None:
                norm = np.linalg.norm(g)
                if norm > cfg.clip_norm:
                    g = g * (cfg.clip_norm / norm)
            state, params = adam_step(state, params, g, cfg)
            totals.append(loss.total)
            weights.append(idx.size)
        report.train_loss.append(float(np.average(totals, weights=weights)))
        if val_idx.size:
            val = ob.regularized_objective(wrap(net.with_flat(params)), Xv, Yv, lambda_x=lam_x, lambda_y=lam_y).total
            report.val_loss.append(float(val))
            if val < best[0]:
                best = (val, params.copy(), epoch)
            logger.info("epoch=%d train_loss=%.10e val_loss=%.10e", epoch, report.train_loss[-1], val)
        else:
            logger.info("epoch=%d train_loss=%.10e", epoch, report.train_loss[-1])

    final = params if not val_idx.size or best[2] is None else best[1]
    report.best_epoch = cfg.epochs - 1 if not val_idx.size else best[2]
    report.steps = state.step
    report.snapshot_id = snapshot_id(final)
    report.wall_time = time.perf_counter() - start
    return net.with_flat(final), report
