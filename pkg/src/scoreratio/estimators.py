"""scikit-learn style front end for the reduction drivers."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .diagnostics import NetConfig, algorithm1, algorithm2
from .linalg import sym_eigendecompose
from .samples import JointSamples
from .training import TrainConfig


def _configs(est, n, m):
    net = NetConfig(min(est.r_prime, n), min(est.s_prime, m) if m else 0, est.hidden_layers, est.width)
    train = TrainConfig(
        learning_rate=est.learning_rate,
        batch_size=est.batch_size,
        epochs=est.epochs,
        lambda_x=est.lambda_x,
        lambda_y=est.lambda_y,
        trace_mode=est.trace_mode,
        n_projections=est.n_projections,
        seed=est.random_state,
        validation_fraction=est.validation_fraction,
        clip_norm=est.clip_norm,
    )
    return net, train


def _check_xy(X, Y):
    X = check_array(X, dtype=float)
    if Y is None:
        Y = np.zeros((X.shape[0], 0))
    else:
        Y = check_array(Y, dtype=float, ensure_min_features=0)
        if Y.shape[0] != X.shape[0]:
            raise ValueError(f"X has {X.shape[0]} rows but Y has {Y.shape[0]}")
    return X, Y


class ScoreRatioReduction(TransformerMixin, BaseEstimator):
    """Parameter and observation subspaces from a single score-ratio network.

    ``fit(X, Y)`` takes joint samples of parameters ``X`` (N, n) and
    observations ``Y`` (N, m); ``Y`` may be omitted when there are none.
    ``transform`` projects parameters onto the selected parameter subspace.

    Attributes
    ----------
    components_x_, components_y_ : ndarray
        Selected orthonormal bases, one column per direction.
    eigenvalues_x_, eigenvalues_y_ : ndarray
        Full spectra of the estimated diagnostic matrices.
    rank_x_, rank_y_ : int
    network_ : ScoreRatioNetwork
    history_ : TrainReport
    """

    def __init__(
        self,
        r_prime=10,
        s_prime=10,
        hidden_layers=1,
        width=32,
        eps_x=1e-2,
        eps_y=1e-2,
        learning_rate=5e-3,
        batch_size=1000,
        epochs=100,
        lambda_x=None,
        lambda_y=None,
        trace_mode="exact",
        n_projections=100,
        validation_fraction=0.1,
        clip_norm=100.0,
        random_state=0,
    ):
        self.r_prime = r_prime
        self.s_prime = s_prime
        self.hidden_layers = hidden_layers
        self.width = width
        self.eps_x = eps_x
        self.eps_y = eps_y
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.epochs = epochs
        self.lambda_x = lambda_x
        self.lambda_y = lambda_y
        self.trace_mode = trace_mode
        self.n_projections = n_projections
        self.validation_fraction = validation_fraction
        self.clip_norm = clip_norm
        self.random_state = random_state

    def fit(self, X, Y=None):
        X, Y = _check_xy(X, Y)
        net_cfg, train_cfg = _configs(self, X.shape[1], Y.shape[1])
        res = algorithm1(JointSamples(X, Y), net_cfg, train_cfg, self.eps_x, self.eps_y)
        self.n_features_in_ = X.shape[1]
        self.n_observations_in_ = Y.shape[1]
        self.basis_x_, self.basis_y_ = res.basis_x, res.basis_y
        self.eigenvalues_x_ = res.basis_x.spectrum
        self.eigenvalues_y_ = res.basis_y.spectrum
        self.rank_x_ = res.basis_x.rank
        self.rank_y_ = res.basis_y.rank
        self.components_x_ = res.basis_x.basis
        self.components_y_ = res.basis_y.basis
        self.network_ = res.network
        self.history_ = res.report
        return self

    def transform(self, X):
        check_is_fitted(self, "components_x_")
        X = check_array(X, dtype=float)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return X @ self.components_x_

    def transform_observations(self, Y):
        check_is_fitted(self, "components_y_")
        Y = check_array(Y, dtype=float, ensure_min_features=0)
        if Y.shape[1] != self.n_observations_in_:
            raise ValueError(f"Y has {Y.shape[1]} columns, expected {self.n_observations_in_}")
        return Y @ self.components_y_


class DeflatedScoreRatioReduction(ScoreRatioReduction):
    """Iterative-deflation variant: ``n_rounds`` networks, ``n_per_round`` directions each.

    All ``n_rounds * n_per_round`` accumulated directions are kept per side;
    the eigenvalue attributes hold each round's leading eigenvalues in order.
    """

    def __init__(
        self,
        n_rounds=2,
        n_per_round=1,
        r_prime=10,
        s_prime=10,
        hidden_layers=1,
        width=32,
        learning_rate=5e-3,
        batch_size=1000,
        epochs=100,
        lambda_x=None,
        lambda_y=None,
        trace_mode="exact",
        n_projections=100,
        validation_fraction=0.1,
        clip_norm=100.0,
        random_state=0,
    ):
        super().__init__(
            r_prime=r_prime,
            s_prime=s_prime,
            hidden_layers=hidden_layers,
            width=width,
            learning_rate=learning_rate,
            batch_size=batch_size,
            epochs=epochs,
            lambda_x=lambda_x,
            lambda_y=lambda_y,
            trace_mode=trace_mode,
            n_projections=n_projections,
            validation_fraction=validation_fraction,
            clip_norm=clip_norm,
            random_state=random_state,
        )
        self.n_rounds = n_rounds
        self.n_per_round = n_per_round

    def fit(self, X, Y=None):
        X, Y = _check_xy(X, Y)
        net_cfg, train_cfg = _configs(self, X.shape[1], Y.shape[1])
        res = algorithm2(JointSamples(X, Y), self.n_rounds, self.n_per_round, net_cfg, train_cfg)
        self.n_features_in_ = X.shape[1]
        self.n_observations_in_ = Y.shape[1]
        self.components_x_, self.components_y_ = res.U, res.V
        self.rank_x_, self.rank_y_ = res.U.shape[1], res.V.shape[1]
        k = self.n_per_round
        self.eigenvalues_x_ = np.concatenate([sym_eigendecompose(r.hx.matrix).values[:k] for r in res.rounds])
        self.eigenvalues_y_ = (
            np.concatenate([sym_eigendecompose(r.hy.matrix).values[:k] for r in res.rounds])
            if Y.shape[1]
            else np.zeros(0)
        )
        self.rounds_ = res.rounds
        self.network_ = res.rounds[-1].network
        self.history_ = [r.report for r in res.rounds]
        return self
