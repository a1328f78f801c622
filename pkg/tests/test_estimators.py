import numpy as np
import pytest
from hypothesis import given, strategies as st

from dfd.estimators import (Batch, Evaluation, MissingHistoryError, ParamHistory,
                            RejectedEvaluationError, compute_lambda, compute_lambdas,
                            estimate_baseline,
                            grad_dfd, grad_es_antithetic, grad_fd, standardize_rewards)
from dfd.vecmath import sample_noise


def make_batch(rewards, origins=None, seed0=1000):
    origins = origins if origins is not None else [0] * len(rewards)
    evals = [Evaluation(seed0 + i, float(r), 1, int(o)) for i, (r, o) in enumerate(zip(rewards, origins))]
    return Batch.from_evals(evals)


def history_of(thetas):
    h = ParamHistory()
    for u, th in enumerate(thetas):
        h.record(u, th)
    return h


# ---- reward standardization -------------------------------------------------

def test_standardize_worked_example():
    b = standardize_rewards(make_batch([1.0, 2.0, 3.0]))
    s = np.sqrt(1.5)
    np.testing.assert_allclose(b.rewards, [-s, 0.0, s], rtol=1e-15)
    assert b.mu_R == 2.0
    assert b.sigma_R == pytest.approx(np.sqrt(2 / 3), rel=1e-15)
    assert not b.degenerate


def test_standardize_keeps_raw_rewards():
    b = standardize_rewards(make_batch([5.0, -1.0]))
    assert list(b.raw_rewards) == [5.0, -1.0]


def test_standardize_degenerate_batch():
    b = standardize_rewards(make_batch([4.0] * 6))
    assert b.degenerate
    assert np.all(b.rewards == 0.0)
    g = grad_fd(b.with_baseline(estimate_baseline(b, 0)), np.zeros(5), 0.02, 0)
    assert np.all(g.g == 0.0)


def test_standardize_needs_two():
    with pytest.raises(ValueError):
        standardize_rewards(make_batch([1.0]))


@given(st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=2, max_size=80))
def test_standardize_moments(rewards):
    b = standardize_rewards(make_batch(rewards))
    if b.degenerate:
        assert np.all(b.rewards == 0.0)
        return
    r = np.asarray(rewards)
    # let float spacing dominate when the spread is tiny relative to magnitude
    tol = 1e-9 + 1e-13 * np.abs(r).max() / b.sigma_R
    assert abs(b.rewards.mean()) <= tol
    assert abs(b.rewards.std() - 1.0) <= tol


# ---- baseline ---------------------------------------------------------------

def test_baseline_inclusive_threshold():
    rewards = [1.0] * 8 + [0.0] * 32
    b = make_batch(rewards, [5] * 8 + [4] * 32)
    assert estimate_baseline(b, 5) == 1.0
    b7 = make_batch([1.0] * 7 + [0.0] * 33, [5] * 7 + [4] * 33)
    assert estimate_baseline(b7, 5) == pytest.approx(7 / 40)


def test_baseline_all_current_is_batch_mean():
    b = make_batch([1.0, 2.0, 6.0])
    assert estimate_baseline(b, 0) == 3.0


# ---- lambda -----------------------------------------------------------------

def test_lambda_current_is_sigma_eps():
    th = np.linspace(-1, 1, 7)
    ev = Evaluation(77, 0.0, 1, 3)
    assert np.array_equal(compute_lambda(ev, 0.3, th, th), 0.3 * sample_noise(77, 7))


def test_lambda_subtracts_accumulated_update():
    old, now = np.zeros(4), np.array([1.0, -2.0, 0.5, 0.0])
    ev = Evaluation(3, 0.0, 1, 0)
    lam = compute_lambda(ev, 0.1, now, old)
    np.testing.assert_allclose(lam, 0.1 * sample_noise(3, 4) - now, rtol=0, atol=1e-15)


def test_lambdas_match_single_bitwise(rng):
    now = rng.standard_normal(6)
    origins = rng.standard_normal((5, 6))
    evs = [Evaluation(40 + i, 0.0, 1, 0) for i in range(5)]
    lam = compute_lambdas(evs, 0.02, now, origins)
    for row, e, o in zip(lam, evs, origins):
        assert row.tobytes() == compute_lambda(e, 0.02, now, o).tobytes()


def test_lambda_bias_identity_mean():
    rng = np.random.default_rng(0)
    nu = rng.standard_normal(10)
    nu *= 1.0 / np.linalg.norm(nu)
    vals = np.array([compute_lambda(Evaluation(s, 0.0, 1, 0), 1.0, nu, np.zeros(10)) @ nu
                     for s in range(20_000)])
    se = vals.std(ddof=1) / np.sqrt(len(vals))
    assert abs(vals.mean() + 1.0) <= 4 * se


# ---- DFD / FD -----------------------------------------------------------------

def test_grad_fd_single_evaluation_hand_computed():
    # one evaluation, baseline 0: g = c * sigma*eps / ||sigma*eps||^2
    b = make_batch([2.0]).with_baseline(0.0)
    g = grad_fd(b, np.zeros(3), 0.5, 0).g
    p = 0.5 * sample_noise(1000, 3)
    np.testing.assert_allclose(g, 2.0 * p / (p @ p), rtol=1e-14)


def test_grad_fd_two_element_mean():
    b = make_batch([1.0, 0.0]).with_baseline(0.0)
    g = grad_fd(b, np.zeros(3), 1.0, 0).g
    p = sample_noise(1000, 3)
    np.testing.assert_allclose(g, 0.5 * p / (p @ p), rtol=1e-14)


def test_grad_fd_recovers_linear_direction_along_perturbation():
    # R(theta + p) - R(theta) = <w, p>; each term projects w onto p
    w = np.array([1.0, -2.0, 3.0])
    sigma = 0.1
    seeds = range(50, 54)
    evs = [Evaluation(s, float(w @ (sigma * sample_noise(s, 3))), 1, 0) for s in seeds]
    g = grad_fd(Batch.from_evals(evs).with_baseline(0.0), np.zeros(3), sigma, 0).g
    ref = np.mean([(w @ p) * p / (p @ p) for p in (sigma * sample_noise(s, 3) for s in seeds)], axis=0)
    np.testing.assert_allclose(g, ref, rtol=1e-12)


def test_grad_fd_rejects_stale():
    b = make_batch([1.0, 2.0], [0, 1]).with_baseline(0.0)
    with pytest.raises(RejectedEvaluationError):
        grad_fd(b, np.zeros(3), 0.1, 1)


def test_grad_requires_baseline():
    with pytest.raises(ValueError):
        grad_fd(make_batch([1.0, 2.0]), np.zeros(3), 0.1, 0)


def test_grad_dfd_uses_origin_params():
    th0, th1 = np.zeros(3), np.array([0.05, -0.02, 0.01])
    h = history_of([th0, th1])
    b = make_batch([1.0, -0.5], [1, 0]).with_baseline(0.25)
    est = grad_dfd(b, th1, 0.02, h)
    assert (est.n_current, est.n_delayed) == (1, 1)
    lam = [0.02 * sample_noise(1000, 3), 0.02 * sample_noise(1001, 3) + (th0 - th1)]
    ref = 0.5 * (0.75 * lam[0] / (lam[0] @ lam[0]) - 0.75 * lam[1] / (lam[1] @ lam[1]))
    np.testing.assert_allclose(est.g, ref, rtol=1e-12)


def test_grad_dfd_missing_history():
    h = ParamHistory(depth=2)
    for u in range(4):
        h.record(u, np.zeros(2))
    b = make_batch([1.0, 2.0], [0, 3]).with_baseline(0.0)
    with pytest.raises(MissingHistoryError):
        grad_dfd(b, np.zeros(2), 0.1, h)


def test_grad_dfd_skips_zero_norm_lambda():
    # lambda vanishes when the update exactly cancels the perturbation
    sigma = 0.1
    eps = sample_noise(1000, 3)
    old = np.zeros(3)
    now = sigma * eps
    h = history_of([old, now])
    b = make_batch([1.0, 3.0], [0, 1]).with_baseline(0.0)
    est = grad_dfd(b, now, sigma, h)
    assert est.n_skipped == 1
    p = sigma * sample_noise(1001, 3)
    np.testing.assert_allclose(est.g, 3.0 * p / (p @ p), rtol=1e-14)


def test_history_eviction_and_order():
    h = ParamHistory(depth=3)
    for u in range(5):
        h.record(u, np.full(2, u))
    assert (h.oldest, h.latest, len(h)) == (2, 4, 3)
    assert 1 not in h
    with pytest.raises(ValueError):
        h.record(4, np.zeros(2))


@given(st.integers(1, 60), st.integers(1, 30), st.integers(0, 2**32), st.floats(1e-3, 2.0),
       st.booleans())
def test_dfd_equals_fd_on_current_batches(n, d, seed, sigma, standardize):
    rng = np.random.default_rng(seed)
    u = int(rng.integers(0, 5))
    thetas = [rng.standard_normal(d) for _ in range(u + 1)]
    b = make_batch(rng.standard_normal(n) * 10, [u] * n, seed0=int(rng.integers(0, 2**40)))
    if standardize and n >= 2:
        b = standardize_rewards(b)
    b = b.with_baseline(estimate_baseline(b, u))
    g_dfd = grad_dfd(b, thetas[u], sigma, history_of(thetas), u).g
    g_fd = grad_fd(b, thetas[u], sigma, u).g
    assert g_dfd.tobytes() == g_fd.tobytes()


def test_zero_centred_rewards_give_zero_gradient():
    b = make_batch([2.0] * 5).with_baseline(2.0)
    assert np.all(grad_fd(b, np.zeros(4), 0.1, 0).g == 0.0)


# ---- antithetic ES ----------------------------------------------------------

def test_es_single_pair_hand_computed():
    plus, minus = Evaluation(9, 3.0, 1, 0), Evaluation(9, 1.0, 1, 0)
    g = grad_es_antithetic([(plus, minus)], 0.5, 4).g
    np.testing.assert_allclose(g, (3.0 - 1.0) * sample_noise(9, 4) / 0.5, rtol=1e-15)


def test_es_linear_expectation():
    w = np.array([0.5, -1.0, 2.0])
    sigma = 0.1
    pairs = []
    for s in range(4000):
        e = sample_noise(s, 3)
        pairs.append((Evaluation(s, float(w @ (sigma * e)), 1, 0),
                      Evaluation(s, float(w @ (-sigma * e)), 1, 0)))
    g = grad_es_antithetic(pairs, sigma, 3).g
    # per-pair terms 2<w,eps>eps have covariance 4(||w||^2 I + w w^T)
    se = 2 * np.sqrt((w @ w + w**2) / len(pairs))
    assert np.all(np.abs(g - 2 * w) <= 4 * se)


def test_es_mismatched_pair():
    with pytest.raises(ValueError):
        grad_es_antithetic([(Evaluation(1, 0.0, 1, 0), Evaluation(2, 0.0, 1, 0))], 0.1, 3)


def test_es_reward_override():
    pair = (Evaluation(9, 100.0, 1, 0), Evaluation(9, -100.0, 1, 0))
    g = grad_es_antithetic([pair], 1.0, 2, rewards=np.array([[1.0, 0.0]])).g
    np.testing.assert_allclose(g, sample_noise(9, 2))


def test_evaluation_validation():
    with pytest.raises(ValueError):
        Evaluation(1, float("nan"), 1, 0)
    with pytest.raises(ValueError):
        Evaluation(1, 0.0, -1, 0)
    with pytest.raises(ValueError):
        Evaluation(-3, 0.0, 1, 0)


def test_zero_centering_of_current_perturbations():
    # E<alpha - theta_u, v> = 0 for current data
    v = np.array([1.0, -0.5, 2.0, 0.0])
    th = np.full(4, 0.3)
    vals = np.array([compute_lambda(Evaluation(s, 0.0, 1, 0), 0.5, th, th) @ v
                     for s in range(20_000)])
    assert abs(vals.mean()) <= 3 * vals.std(ddof=1) / np.sqrt(len(vals))


def test_fd_scale_contract_on_linear_returns():
    w = np.array([1.0, 2.0, -1.0])
    seeds = list(range(300, 1300))
    means = []
    for sigma in (1e-3, 1e-1):
        evs = [Evaluation(s, float(w @ (sigma * sample_noise(s, 3))), 1, 0) for s in seeds]
        b = Batch.from_evals(evs)
        means.append(grad_fd(b.with_baseline(0.0), np.zeros(3), sigma, 0).g)
    # with a common seed set the estimate is exactly sigma-invariant
    np.testing.assert_allclose(means[0], means[1], rtol=1e-9)
    np.testing.assert_allclose(means[0], w / 3, atol=0.15)


@given(st.lists(st.floats(-1e8, 1e8, allow_nan=False), min_size=2, max_size=40),
       st.integers(0, 3), st.floats(1e-4, 10.0))
def test_estimates_are_finite(rewards, k, sigma):
    n = len(rewards)
    thetas = [np.full(3, float(j)) for j in range(k + 1)]
    origins = [k - (i % (k + 1)) for i in range(n)]
    b = standardize_rewards(make_batch(rewards, origins))
    b = b.with_baseline(estimate_baseline(b, k))
    assert np.all(np.isfinite(grad_dfd(b, thetas[k], sigma, history_of(thetas), k).g))
