import numpy as np
import pytest
from scipy.linalg import solve_discrete_lyapunov

from dfd.environments import (LQR, PointMass, Quadratic, Rosenbrock, RolloutError, VariableLength,
                              analytic_gradient, make_objective, rollout)
from dfd.policy import ObsStandardizer
from dfd.vecmath import DimensionError, episode_rng


def central_diff(f, x, h=1e-5):
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def test_quadratic_value_and_gradient(rng):
    t = rng.standard_normal(5)
    q = Quadratic(5, t)
    assert q.value(t) == 0.0
    assert rollout(q, t + 1.0, None) == (-5.0, 1)
    x = rng.standard_normal(5)
    np.testing.assert_allclose(analytic_gradient(q, x), central_diff(q.value, x), rtol=1e-7)
    assert np.all(analytic_gradient(q, t) == 0.0)
    e1 = np.eye(5)[0]
    np.testing.assert_allclose(analytic_gradient(q, t + e1), -2 * e1, atol=1e-15)


def test_rosenbrock_gradient(rng):
    r = Rosenbrock(5)
    assert r.value(np.ones(5)) == 0.0
    for _ in range(5):
        x = rng.uniform(-1.5, 1.5, 5)
        assert np.max(np.abs(r.analytic_gradient(x) - central_diff(r.value, x))) <= 1e-5


def test_lqr_matches_lyapunov_closed_form():
    H = 50
    env = LQR(horizon=H, x0=[1.0, -0.5])
    for K in ([[1.0, 1.5]], [[0.3, 0.8]], [[2.0, 3.0]]):
        K = np.array(K)
        acl = env.A - env.B @ K
        S = env.Q + K.T @ env.R @ K
        P = solve_discrete_lyapunov(acl.T, S)
        AH = np.linalg.matrix_power(acl, H)
        PH = P - AH.T @ P @ AH
        x0 = env.x0
        R, T = env.rollout(K.ravel())
        assert T == H
        assert R == pytest.approx(-x0 @ PH @ x0, rel=1e-8)


def test_lqr_divergence_raises():
    env = LQR(horizon=2000, x0=[1.0, 1.0])
    with pytest.raises(RolloutError):
        env.rollout(np.array([-1e3, -1e3]))


def test_no_analytic_gradient_for_episodic():
    with pytest.raises(NotImplementedError):
        analytic_gradient(PointMass(hidden=(4,)), np.zeros(PointMass(hidden=(4,)).dim))


def test_point_mass_deterministic_given_seed():
    env = PointMass(hidden=(16, 16), max_episode_len=200)
    th = env.initial_params(np.random.default_rng(3))
    assert env.rollout(th, episode_rng(11)) == env.rollout(th, episode_rng(11))
    assert env.rollout(th, episode_rng(11)) != env.rollout(th, episode_rng(12))


def test_point_mass_return_bounds():
    env = PointMass(hidden=(8, 8), max_episode_len=100)
    th = env.initial_params(np.random.default_rng(0))
    for s in range(10):
        R, T = env.rollout(th, episode_rng(s))
        assert 1 <= T <= 100
        assert 0.0 <= R <= T


@pytest.mark.parametrize("hidden", [(16, 16), (8,)])
def test_point_mass_batch_matches_single(hidden):
    env = PointMass(hidden=hidden, max_episode_len=150)
    rng = np.random.default_rng(5)
    thetas = np.stack([env.initial_params(rng) for _ in range(6)])
    Rb, Tb = env.rollout_batch(thetas, [episode_rng(s) for s in range(6)])
    for k in range(6):
        R, T = env.rollout(thetas[k], episode_rng(k))
        assert T == Tb[k]
        assert R == pytest.approx(Rb[k], rel=1e-10)


def test_point_mass_single_rollout_updates_obs_stats():
    env = PointMass(hidden=(8, 8), max_episode_len=50)
    std = ObsStandardizer(4)
    _, T = env.rollout(env.initial_params(np.random.default_rng(0)), episode_rng(1), std)
    assert std.count == T


def test_dimension_checked():
    with pytest.raises(DimensionError):
        Quadratic(3).value(np.zeros(4))


def test_variable_length_distributions():
    fixed = VariableLength(dim=3, dist="fixed", mean_len=17)
    assert {fixed.rollout(np.zeros(3), episode_rng(s))[1] for s in range(20)} == {17}
    ln = VariableLength(dim=3, dist="lognormal", mean_len=100, shape=0.5, max_episode_len=10**6)
    lens = np.array([ln.sample_length(np.random.default_rng(s)) for s in range(4000)])
    assert np.median(lens) == pytest.approx(100, rel=0.05)
    par = VariableLength(dim=3, dist="pareto", mean_len=50, shape=1.5, max_episode_len=500)
    lens = np.array([par.sample_length(np.random.default_rng(s)) for s in range(4000)])
    assert lens.min() >= 50 and lens.max() == 500
    # Lomax tail: P(T > 100) = (1 + 1)^-1.5
    assert np.mean(lens > 100) == pytest.approx(2 ** -1.5, abs=0.03)
    with pytest.raises(ValueError):
        VariableLength(dist="uniform")


def test_make_objective():
    assert isinstance(make_objective("lqr", horizon=5), LQR)
    with pytest.raises(ValueError):
        make_objective("cartpole")
