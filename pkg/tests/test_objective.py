import numpy as np
import pytest

from helpers import linear_network, random_network
from scoreratio import autodiff as ad
from scoreratio.autodiff import MlpParams
from scoreratio.exceptions import DimensionMismatch, EmptyBatch
from scoreratio.linalg import make_rng
from scoreratio.network import ScoreRatioNetwork
from scoreratio.objective import (
    default_lambdas,
    explicit_loss,
    fit_affine_ratio,
    implicit_loss,
    nuclear_norm,
    nuclear_subgradient,
    objective_and_gradient,
    rademacher,
    regularized_objective,
)
from scoreratio.problems import LinGaussProblem, LinGaussRatio, lingauss_true_hx, sample_lingauss


def full_jacobians(net, X, Y):
    J = net.reduced_input_jacobian(X, Y)
    return np.einsum("ai,jik,bk->jab", net.W_x, J, net.W_x)


def test_zero_network_zero_loss(rng):
    net = ScoreRatioNetwork.initialize(4, 2, 2, 1, 1, 8, rng)
    loss = implicit_loss(net, rng.standard_normal((9, 4)), rng.standard_normal((9, 2)))
    assert (loss.quadratic, loss.trace, loss.reference, loss.total) == (0, 0, 0, 0)


def test_minus_identity_at_origin():
    net = ScoreRatioNetwork(np.ones((1, 1)), np.zeros((0, 0)), MlpParams([-np.ones((1, 1))], [np.zeros(1)]))
    loss = implicit_loss(net, np.zeros((1, 1)))
    assert loss.total == -1.0
    assert loss.trace == -1.0
    # per sample: x^2/2 - 1 + x^2
    x = np.array([[0.5], [-2.0]])
    assert implicit_loss(net, x).total == pytest.approx(np.mean(1.5 * x[:, 0] ** 2 - 1))


def test_batch_errors(rng):
    net = random_network(rng)
    with pytest.raises(EmptyBatch):
        implicit_loss(net, np.zeros((0, 5)), np.zeros((0, 3)))
    with pytest.raises(DimensionMismatch):
        implicit_loss(net, np.zeros((2, 4)), np.zeros((2, 3)))


def test_exact_versus_sliced(rng):
    net = random_network(rng)
    N, k = 256, 4096
    X, Y = rng.standard_normal((N, 5)), rng.standard_normal((N, 3))
    exact = implicit_loss(net, X, Y).trace
    sliced = implicit_loss(net, X, Y, trace_mode="sliced", n_projections=k, rng=7).trace
    V = rademacher(make_rng(7), (k, N, 5))
    per_dir = np.einsum("kna,nab,knb->k", V, full_jacobians(net, X, Y), V) / N
    assert sliced == pytest.approx(per_dir.mean(), rel=1e-10)
    se = per_dir.std(ddof=1) / np.sqrt(k)
    assert abs(sliced - exact) < 3 * se


def test_sliced_mean_over_runs(rng):
    net = random_network(rng)
    X, Y = rng.standard_normal((64, 5)), rng.standard_normal((64, 3))
    exact = implicit_loss(net, X, Y).trace
    runs = np.array([implicit_loss(net, X, Y, trace_mode="sliced", n_projections=100, rng=s).trace for s in range(50)])
    assert abs(runs.mean() - exact) < 4 * runs.std(ddof=1) / np.sqrt(50)


def test_sliced_is_deterministic(rng):
    net = random_network(rng)
    X, Y = rng.standard_normal((8, 5)), rng.standard_normal((8, 3))
    a = implicit_loss(net, X, Y, trace_mode="sliced", n_projections=10, rng=3)
    b = implicit_loss(net, X, Y, trace_mode="sliced", n_projections=10, rng=3)
    assert a == b


def test_explicit_loss_examples(rng):
    net = random_network(rng)
    X, Y = rng.standard_normal((10, 5)), rng.standard_normal((10, 3))
    assert explicit_loss(net, X, Y, net.forward) == 0.0
    zero = ScoreRatioNetwork.initialize(5, 3, 2, 2, 1, 4, rng)
    e1 = lambda X, Y: np.tile(np.eye(5)[0], (X.shape[0], 1))
    assert explicit_loss(zero, X, Y, e1) == pytest.approx(0.5)


def test_explicit_loss_lingauss_closed_form(rng):
    p = LinGaussProblem.random(4, 6, rng)
    data = sample_lingauss(p, 20000, rng)
    zero = ScoreRatioNetwork.initialize(4, 6, 2, 2, 1, 4, rng)
    ratio = LinGaussRatio(p)
    per = 0.5 * np.sum(ratio.forward(data.xs, data.ys) ** 2, axis=1)
    value = explicit_loss(zero, data.xs, data.ys, ratio.forward)
    assert value == pytest.approx(per.mean())
    assert abs(value - 0.5 * np.trace(lingauss_true_hx(p))) < 3 * per.std(ddof=1) / np.sqrt(data.N)


def test_nuclear_diag():
    assert nuclear_norm(np.diag([3.0, 4.0])) == pytest.approx(7)
    np.testing.assert_allclose(nuclear_subgradient(np.diag([3.0, 4.0])), np.eye(2), atol=1e-14)


def test_nuclear_zero():
    assert nuclear_norm(np.zeros((3, 2))) == 0
    np.testing.assert_array_equal(nuclear_subgradient(np.zeros((3, 2))), 0)


def test_nuclear_rank_one(rng):
    a = rng.standard_normal(4)
    b = rng.standard_normal(3)
    a, b = a / np.linalg.norm(a), b / np.linalg.norm(b)
    W = 5 * np.outer(a, b)
    assert nuclear_norm(W) == pytest.approx(5)
    np.testing.assert_allclose(nuclear_subgradient(W), np.outer(a, b), atol=1e-12)


def test_regularizer_linearity(rng):
    net = random_network(rng)
    X, Y = rng.standard_normal((16, 5)), rng.standard_normal((16, 3))
    plain = implicit_loss(net, X, Y)
    zero = regularized_objective(net, X, Y, lambda_x=0.0, lambda_y=0.0)
    assert zero.total == plain.total
    one = regularized_objective(net, X, Y, lambda_x=0.3, lambda_y=0.0)
    two = regularized_objective(net, X, Y, lambda_x=0.6, lambda_y=0.0)
    assert two.regularizer == 2 * one.regularizer
    assert one.regularizer == pytest.approx(0.3 * nuclear_norm(net.W_x))


def test_default_lambdas():
    lx, ly = default_lambdas(10, 90)
    assert lx == 0.1
    assert ly == 1 / 90
    assert default_lambdas(4, 0) == (0.25, 0.0)


def test_negative_lambda_rejected(rng):
    with pytest.raises(ValueError):
        regularized_objective(random_network(rng), np.zeros((1, 5)), np.zeros((1, 3)), lambda_x=-1)


@pytest.mark.parametrize("seed", range(3))
def test_gradient_matches_fd(seed):
    rng = np.random.default_rng(seed)
    net = random_network(rng)
    X, Y = rng.standard_normal((8, 5)), rng.standard_normal((8, 3))
    loss, g = objective_and_gradient(net, X, Y)
    assert loss.total == pytest.approx(implicit_loss(net, X, Y).total, rel=1e-13)
    theta = net.flatten()
    h = 1e-5
    for i in range(theta.size):
        if abs(g[i]) <= 1e-6:
            continue
        e = np.zeros_like(theta)
        e[i] = h
        fd = (implicit_loss(net.with_flat(theta + e), X, Y).total - implicit_loss(net.with_flat(theta - e), X, Y).total) / (2 * h)
        assert abs(fd - g[i]) <= 1e-4 * max(abs(g[i]), 1e-3), (i, fd, g[i])


def test_subgradient_routed_to_projection_slots(rng):
    net = random_network(rng)
    X, Y = rng.standard_normal((8, 5)), rng.standard_normal((8, 3))
    _, g0 = objective_and_gradient(net, X, Y)
    _, g1 = objective_and_gradient(net, X, Y, lambda_x=0.5, lambda_y=0.25)
    nx, ny = net.W_x.size, net.W_y.size
    np.testing.assert_allclose(g1[:nx] - g0[:nx], 0.5 * nuclear_subgradient(net.W_x).ravel(), atol=1e-14)
    np.testing.assert_allclose(g1[nx : nx + ny] - g0[nx : nx + ny], 0.25 * nuclear_subgradient(net.W_y).ravel(), atol=1e-14)
    np.testing.assert_array_equal(g1[nx + ny :], g0[nx + ny :])


def test_affine_minimizer_recovers_ratio():
    rng = make_rng(2024)
    p = LinGaussProblem.random(3, 4, rng)
    data = sample_lingauss(p, 50_000, rng)
    fit = fit_affine_ratio(data.xs, data.ys)
    B_true = -lingauss_true_hx(p)
    C_true = p.A.T @ p.noise_precision
    assert np.linalg.norm(fit.B - B_true) / np.linalg.norm(B_true) < 0.05
    assert np.linalg.norm(fit.C - C_true) / np.linalg.norm(C_true) < 0.05
    assert np.linalg.norm(fit.b) < 0.05 * np.linalg.norm(C_true)


def test_affine_minimizer_is_stationary_for_tape_gradient():
    # express the fitted affine map as a full-rank ridge network and check the tape gradient there
    rng = make_rng(5)
    p = LinGaussProblem.random(2, 2, rng, noise_var=0.5)
    data = sample_lingauss(p, 4000, rng)
    fit = fit_affine_ratio(data.xs, data.ys)
    net = linear_network(np.eye(2), np.eye(2), fit.B, fit.C, fit.b)
    _, g = objective_and_gradient(net, data.xs, data.ys)
    psi_grad = g[8:]
    assert np.abs(psi_grad).max() < 1e-10


def test_explicit_and_implicit_gradients_align():
    rng = make_rng(11)
    p = LinGaussProblem.random(3, 3, rng)
    data = sample_lingauss(p, 100_000, rng)
    net = random_network(rng, n=3, m=3, r=2, s=2, width=6)
    _, g_imp = objective_and_gradient(net, data.xs, data.ys)
    tape = ad.Tape()
    rec = net.record(tape)
    w, _ = rec.evaluate(data.xs, data.ys)
    diff = w - LinGaussRatio(p).forward(data.xs, data.ys)
    g_exp = ad.grad(ad.mean(ad.sum_(diff * diff, axis=1)) * 0.5, rec)
    cos = g_imp @ g_exp / (np.linalg.norm(g_imp) * np.linalg.norm(g_exp))
    assert cos > 0.9
