"""Joint parameter/observation sample container."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import DimensionMismatch


@dataclass(frozen=True)
class JointSamples:
    """Rows of ``xs`` (N, n) paired with rows of ``ys`` (N, m); ``m`` may be 0."""

    xs: np.ndarray
    ys: np.ndarray | None = None

    def __post_init__(self):
        xs = np.asarray(self.xs, dtype=float)
        if xs.ndim != 2:
            raise DimensionMismatch(f"xs must be 2-D, got shape {xs.shape}")
        ys = np.zeros((xs.shape[0], 0)) if self.ys is None else np.asarray(self.ys, dtype=float)
        if ys.ndim == 1 and ys.size == 0:
            ys = ys.reshape(xs.shape[0], 0)
        if ys.ndim != 2 or ys.shape[0] != xs.shape[0]:
            raise DimensionMismatch(f"ys must have {xs.shape[0]} rows, got shape {ys.shape}")
        if not (np.all(np.isfinite(xs)) and np.all(np.isfinite(ys))):
            raise ValueError("samples must be finite")
        object.__setattr__(self, "xs", xs)
        object.__setattr__(self, "ys", ys)

    @property
    def N(self) -> int:
        return self.xs.shape[0]

    @property
    def n(self) -> int:
        return self.xs.shape[1]

    @property
    def m(self) -> int:
        return self.ys.shape[1]

    def __len__(self):
        return self.N

    def subset(self, index) -> "JointSamples":
        return JointSamples(self.xs[index], self.ys[index])


def as_samples(X, Y=None) -> JointSamples:
    if isinstance(X, JointSamples):
        return X
    return JointSamples(X, Y)
