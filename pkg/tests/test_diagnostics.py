import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from helpers import linear_network, random_network
from scoreratio.diagnostics import (
    CDR,
    CMI,
    FullRankWarning,
    NetConfig,
    algorithm1,
    algorithm2,
    deflate_matrix,
    error_bound_cdr,
    error_bound_cmi,
    error_curve,
    estimate_hx,
    estimate_hy,
    reduction_basis,
    select_rank,
    tail_bounds,
)
from scoreratio.exceptions import EmptyBatch, NotOrthonormal, RankExhausted
from scoreratio.linalg import make_rng, principal_angles, random_rotation, sym_eigendecompose
from scoreratio.autodiff import MlpParams
from scoreratio.network import ScoreRatioNetwork
from scoreratio.problems import (
    LinGaussProblem,
    LinGaussRatio,
    lingauss_avg_kl,
    lingauss_true_hx,
    lingauss_true_hy,
    sample_lingauss,
)
from scoreratio.samples import JointSamples
from scoreratio.training import TrainConfig


def _data(rng, N=50, n=5, m=3):
    return JointSamples(rng.standard_normal((N, n)), rng.standard_normal((N, m)))


def test_hx_zero_network(rng):
    net = ScoreRatioNetwork.initialize(5, 3, 2, 2, 1, 8, rng)
    H = estimate_hx(net, _data(rng))
    np.testing.assert_array_equal(H.matrix, 0)
    assert H.n_samples == 50


def test_hx_constant_e1(rng):
    psi = MlpParams([np.zeros((1, 1))], [np.ones(1)])
    net = ScoreRatioNetwork(np.eye(4)[:, :1], np.zeros((2, 0)), psi)
    H = estimate_hx(net, _data(rng, n=4, m=2))
    np.testing.assert_array_equal(H.matrix, np.outer(np.eye(4)[0], np.eye(4)[0]))


def test_hx_empty(rng):
    with pytest.raises(EmptyBatch):
        estimate_hx(random_network(rng), _data(rng, N=0))


def test_hx_lingauss_closed_form():
    rng = make_rng(8)
    p = LinGaussProblem.random(4, 5, rng)
    data = sample_lingauss(p, 50_000, rng)
    H = estimate_hx(LinGaussRatio(p), data).matrix
    true = lingauss_true_hx(p)
    assert np.linalg.norm(H - true) / np.linalg.norm(true) < 0.05


def test_hy_independent_of_y(rng):
    W = np.zeros((3, 2))
    W[:2] = rng.standard_normal((2, 2))
    net = ScoreRatioNetwork(np.eye(5)[:, :2], np.eye(3)[:, :1], MlpParams([W], [np.zeros(2)]))
    np.testing.assert_array_equal(estimate_hy(net, _data(rng)).matrix, 0)


def test_hy_constant_gradient_exact(rng):
    p = LinGaussProblem.random(3, 4, rng)
    data = sample_lingauss(p, 1, rng)
    H = estimate_hy(LinGaussRatio(p), data).matrix
    np.testing.assert_allclose(H, lingauss_true_hy(p), rtol=1e-12, atol=1e-12)


def test_hy_rank_ceiling(rng):
    net = random_network(rng, n=4, m=6, r=3, s=2)
    lam = np.linalg.eigvalsh(estimate_hy(net, _data(rng, N=200, n=4, m=6)).matrix)[::-1]
    assert np.all(lam[2:] < 1e-10 * lam[0])


def test_select_rank_examples():
    assert select_rank([4, 2, 0, 0], 1.5, CDR) == 1
    assert select_rank([0, 0, 0], 1e-3, CDR) == 0
    with pytest.warns(FullRankWarning):
        assert select_rank([1, 1, 1], 0.5, CMI) == 3


def test_select_rank_rejects_bad_eps():
    with pytest.raises(ValueError):
        select_rank([1.0], 0.0, CDR)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(0, 100), min_size=1, max_size=12), st.floats(1e-3, 50), st.sampled_from([CDR, CMI]))
def test_select_rank_consistency(values, eps, kind):
    spectrum = np.sort(values)[::-1]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", FullRankWarning)
        r = select_rank(spectrum, eps, kind)
    tails = tail_bounds(spectrum, kind)
    assert tails[r] < eps
    if r >= 1:
        assert tails[r - 1] >= eps


def test_error_bounds_examples():
    H = np.diag([4.0, 2.0])
    assert error_bound_cdr(np.eye(2), H) == 0
    assert error_bound_cdr(np.eye(2)[:, :1], H) == pytest.approx(1)
    assert error_bound_cdr(np.eye(2)[:, 1:], H) == pytest.approx(2)
    assert error_bound_cmi(np.eye(2)[:, :1], H) == pytest.approx(2)
    assert error_bound_cdr(np.zeros((2, 0)), H) == pytest.approx(3)


def test_error_bound_not_orthonormal():
    with pytest.raises(NotOrthonormal):
        error_bound_cdr(np.array([[1.0], [1.0]]), np.eye(2))
    with pytest.raises(NotOrthonormal):
        error_bound_cmi(np.array([[1.0, 1.0], [0.0, 1.0]]), np.eye(2))


@pytest.mark.parametrize("seed", range(5))
def test_error_curves_monotone_and_above_optimal(seed):
    rng = np.random.default_rng(seed)
    G = rng.standard_normal((6, 6))
    H = G @ G.T
    _, vecs = sym_eigendecompose(H)
    other = random_rotation(6, rng)
    for kind in (CDR, CMI):
        opt = error_curve(vecs, H, kind)
        mine = error_curve(other, H, kind)
        assert np.all(np.diff(mine) <= 1e-10)
        assert np.all(mine >= opt - 1e-10)
        np.testing.assert_allclose(opt, tail_bounds(np.linalg.eigvalsh(H)[::-1], kind), atol=1e-9)


def test_reduction_basis_flags_full_rank():
    with pytest.warns(FullRankWarning):
        basis = reduction_basis(np.eye(3), 0.5, CMI)
    assert basis.rank == 3 and basis.warning
    quiet = reduction_basis(np.diag([5.0, 0.0, 0.0]), 0.5, CDR)
    assert quiet.rank == 1 and not quiet.warning
    assert quiet.basis.shape == (3, 1)


def test_reduction_basis_empty():
    basis = reduction_basis(np.zeros((0, 0)), 0.1, CMI)
    assert basis.rank == 0 and basis.basis.shape == (0, 0)


@pytest.mark.parametrize("r", [1, 3, 5])
def test_deflated_matrix_eigenpairs(rng, r):
    Q = random_rotation(8, rng)
    lam = np.array([8.0, 6.5, 5.0, 4.0, 3.0, 2.0, 1.0, 0.5])
    A = Q @ np.diag(lam) @ Q.T
    Phi = Q[:, :r]
    vals, vecs = sym_eigendecompose(deflate_matrix(A, Phi))
    expected = np.sort(np.concatenate([lam[r:], np.zeros(r)]))[::-1]
    np.testing.assert_allclose(vals, expected, atol=1e-10)
    for k in range(8 - r):
        assert abs(abs(vecs[:, k] @ Q[:, r + k]) - 1) < 1e-10


@pytest.mark.parametrize("r", [0, 1, 2, 3])
def test_lingauss_kl_below_bound(rng, r):
    p = LinGaussProblem.random(4, 3, rng)
    H = lingauss_true_hx(p)
    vals, vecs = sym_eigendecompose(H)
    U = vecs[:, :r]
    kl = lingauss_avg_kl(p, U)
    assert 0 <= kl <= 0.5 * vals[r:].sum() + 1e-12


# -- drivers ------------------------------------------------------------------


def test_algorithm1_reference_equals_target():
    rng = make_rng(0)
    data = JointSamples(rng.standard_normal((4000, 2)))
    res = algorithm1(data, NetConfig(2, 0, 1, 16), TrainConfig(epochs=30, batch_size=500), 0.1, 0.1)
    assert res.basis_x.spectrum[0] < 0.1
    assert res.basis_x.rank == 0


def test_algorithm1_rank_one_lingauss():
    rng = make_rng(3)
    u = rng.standard_normal(3)
    v = rng.standard_normal(4)
    v /= np.linalg.norm(v)
    p = LinGaussProblem(np.outer(u, v), 0.5 * np.eye(3))
    data = sample_lingauss(p, 5000, rng)
    res = algorithm1(data, NetConfig(2, 2, 1, 16), TrainConfig(epochs=40), 0.1, 0.1)
    angle = principal_angles(res.basis_x.vectors[:, :1], v[:, None])[0]
    assert np.degrees(angle) < 5
    x_basis, y_basis, net = res
    assert net is res.network and x_basis is res.basis_x


@pytest.fixture(scope="module")
def small_problem():
    rng = make_rng(21)
    p = LinGaussProblem.random(4, 3, rng)
    return sample_lingauss(p, 600, rng)


def test_algorithm2_single_round_matches_algorithm1(small_problem):
    net_cfg, cfg = NetConfig(2, 2, 1, 8), TrainConfig(epochs=3, batch_size=200)
    one = algorithm1(small_problem, net_cfg, cfg, 1e-2, 1e-2)
    two = algorithm2(small_problem, 1, 2, net_cfg, cfg)
    assert np.array_equal(two.U, one.basis_x.vectors[:, :2])
    assert np.array_equal(two.V, one.basis_y.vectors[:, :2])


def test_algorithm2_orthonormal_and_kernel(small_problem):
    res = algorithm2(small_problem, 3, 1, NetConfig(2, 2, 1, 8), TrainConfig(epochs=3, batch_size=200))
    assert res.U.shape == (4, 3) and res.V.shape == (3, 3)
    np.testing.assert_allclose(res.U.T @ res.U, np.eye(3), atol=1e-8)
    np.testing.assert_allclose(res.V.T @ res.V, np.eye(3), atol=1e-8)
    # the round-2 leading eigenvectors are orthogonal to round-1 output
    second = res.rounds[1]
    ux = sym_eigendecompose(second.hx.matrix).vectors[:, 0]
    vy = sym_eigendecompose(second.hy.matrix).vectors[:, 0]
    assert abs(ux @ res.U[:, 0]) < 1e-6
    assert abs(vy @ res.V[:, 0]) < 1e-6
    assert res.rounds[0].proj_x is None and res.rounds[1].proj_x is not None


def test_algorithm2_rank_exhausted(small_problem):
    with pytest.raises(RankExhausted):
        algorithm2(small_problem, 4, 1, NetConfig(2, 2), TrainConfig(epochs=1))
    with pytest.raises(ValueError):
        algorithm2(small_problem, 1, 3, NetConfig(2, 2), TrainConfig(epochs=1))
