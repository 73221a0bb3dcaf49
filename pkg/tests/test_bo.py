import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad
from scipy.stats import norm
from sklearn.gaussian_process import GaussianProcessRegressor
from sklearn.gaussian_process.kernels import Matern

from gils.bo import (
    LENGTHSCALE_GRID,
    SearchSpace,
    Trial,
    bo_search,
    ei_from_moments,
    expected_improvement,
    fit_gp,
    gp_fit,
    incumbent_trace,
    kernel_matrix,
    matern52,
)
from gils.errors import ConfigError, FitError
from oracles import INV_SQRT_2PI, MATERN52_AT_ONE


def test_matern_at_zero_is_variance():
    assert matern52(0.0, 0.7, 2.5) == 2.5


def test_matern_decays():
    assert matern52(100.0, 1.0, 3.0) < 1e-90 * 3.0
    r = np.linspace(0, 10, 200)
    assert np.all(np.diff(matern52(r, 1.3, 1.0)) < 0)


def test_matern_high_precision_value():
    assert matern52(1.0, 1.0, 1.0) == pytest.approx(MATERN52_AT_ONE, rel=1e-15)


def test_matern_rejects_bad_lengthscale():
    for ell in (0.0, -1.0):
        with pytest.raises(ConfigError):
            matern52(1.0, ell)


def test_kernel_matches_sklearn():
    rng = np.random.default_rng(0)
    A, B = rng.uniform(size=(6, 3)), rng.uniform(size=(4, 3))
    ls = np.array([0.3, 1.1, 0.7])
    np.testing.assert_allclose(kernel_matrix(A, B, ls), Matern(length_scale=ls, nu=2.5)(A, B), rtol=1e-12, atol=1e-14)


def test_ei_deterministic_cases():
    assert ei_from_moments(0.7, 0.0, 0.7) == 0.0
    assert ei_from_moments(0.7 + 0.25, 0.0, 0.7) == 0.25
    assert ei_from_moments(0.5, 0.0, 0.7) == 0.0


def test_ei_standard_normal_value():
    integral, _ = quad(lambda y: y * norm.pdf(y), 0, np.inf, epsabs=1e-14)
    assert ei_from_moments(0.0, 1.0, 0.0) == pytest.approx(INV_SQRT_2PI, rel=1e-15)
    assert ei_from_moments(0.0, 1.0, 0.0) == pytest.approx(integral, rel=1e-12)


@given(st.floats(-5, 5), st.floats(0, 5), st.floats(-5, 5))
def test_ei_nonnegative_and_matches_quadrature(mu, sigma, inc):
    ei = ei_from_moments(mu, sigma, inc)
    assert ei >= 0
    if sigma > 1e-3:
        ref, _ = quad(lambda y: max(y - inc, 0.0) * norm.pdf(y, mu, sigma), inc, mu + 12 * sigma, epsabs=1e-12, limit=200)
        assert ei == pytest.approx(ref, rel=1e-6, abs=1e-10)


def _trial(i, point, value):
    return Trial(i, list(point), {}, value, 0, i)


def test_identical_points_interpolate():
    post = gp_fit([_trial(0, [0.3, 0.3], 0.8), _trial(1, [0.3, 0.3], 0.8)])
    assert post.predict([0.3, 0.3])[0][0] == pytest.approx(0.8, abs=1e-6)


def test_fit_needs_two_trials():
    with pytest.raises(FitError):
        gp_fit([_trial(0, [0.5], 0.1)])
    with pytest.raises(FitError):
        gp_fit([_trial(0, [0.5], 0.1), _trial(1, [0.2], None)])


def test_singular_covariance_is_a_fit_error(monkeypatch):
    import gils.bo as bo

    def always_fails(*args, **kwargs):
        raise np.linalg.LinAlgError("not positive definite")

    monkeypatch.setattr(bo, "cholesky", always_fails)
    with pytest.raises(FitError, match="maximum jitter"):
        fit_gp(np.array([[0.1], [0.2]]), np.array([0.0, 1.0]))
    with pytest.raises(FitError):
        gp_fit([_trial(0, [np.nan], 0.1), _trial(1, [0.2], 0.3)])


def test_sine_regression_and_sklearn_agreement():
    X = np.linspace(0, 1, 8)[:, None]
    y = np.sin(2 * np.pi * X[:, 0])
    post = fit_gp(X, y)
    Xq = np.linspace(0.03, 0.97, 25)[:, None]
    mu, sd = post.predict(Xq)
    assert np.max(np.abs(mu - np.sin(2 * np.pi * Xq[:, 0]))) <= 0.1
    ys = (y - post.y_mean) / post.y_std
    ref = GaussianProcessRegressor(Matern(length_scale=post.lengthscales, nu=2.5), alpha=post.jitter, optimizer=None)
    ref.fit(X, ys)
    m_ref, s_ref = ref.predict(Xq, return_std=True)
    np.testing.assert_allclose(mu, post.y_mean + post.y_std * m_ref, rtol=0, atol=1e-8)
    np.testing.assert_allclose(sd, post.y_std * np.sqrt(post.signal_variance) * s_ref, rtol=1e-6, atol=1e-8)


def test_fit_reproduces_training_targets_within_noise():
    rng = np.random.default_rng(1)
    for _ in range(10):
        X = rng.uniform(size=(12, 4))
        y = rng.uniform(size=12)
        post = fit_gp(X, y)
        resid = np.abs(post.predict(X)[0] - y)
        assert np.all(resid <= 3 * post.noise_std + 1e-12)
        assert np.all(np.diag(post.chol) > 0)
        assert np.all(post.predict(rng.uniform(size=(50, 4)))[1] >= 0)
        assert all(ell in LENGTHSCALE_GRID for ell in post.lengthscales)


def test_expected_improvement_on_posterior():
    X = np.array([[0.1], [0.5], [0.9]])
    post = fit_gp(X, np.array([0.2, 0.6, 0.3]))
    grid = np.linspace(0, 1, 101)[:, None]
    ei = expected_improvement(post, grid, 0.6)
    assert np.all(ei >= 0)
    assert expected_improvement(post, np.array([0.5]), 0.6) < 1e-3


def test_search_space_bounds_and_rounding():
    space = SearchSpace()
    lo = space.decode(np.zeros(4))
    hi = space.decode(np.ones(4))
    assert lo == {"alpha": 0.0, "steps": 1, "eta": 1.5, "epochs": 21}
    assert hi == {"alpha": 0.5, "steps": 15, "eta": 3.0, "epochs": 60}
    assert space.decode([0.5, 0.5, 0.5, 0.5])["steps"] == 8
    with pytest.raises(ConfigError):
        space.encode({"alpha": 0.6, "steps": 1, "eta": 2.0, "epochs": 30})


def test_encode_decode_round_trip_on_grid():
    space = SearchSpace()
    alphas = np.round(np.arange(0, 0.5001, 0.01), 2)
    etas = np.round(np.arange(1.5, 3.0001, 0.01), 2)
    for steps, epochs in itertools.product(range(1, 16), range(21, 61)):
        for alpha, eta in zip(alphas, etas[: alphas.size]):
            cfg = {"alpha": float(alpha), "steps": steps, "eta": float(eta), "epochs": epochs}
            assert space.decode(space.encode(cfg)) == cfg
    for alpha, eta in itertools.product(alphas, etas):
        cfg = {"alpha": float(alpha), "steps": 3, "eta": float(eta), "epochs": 40}
        assert space.decode(space.encode(cfg)) == cfg


@given(st.floats(0, 0.5), st.integers(1, 15), st.floats(1.5, 3.0), st.integers(21, 60))
def test_encode_decode_round_trip_property(alpha, steps, eta, epochs):
    space = SearchSpace()
    cfg = {"alpha": alpha, "steps": steps, "eta": eta, "epochs": epochs}
    assert space.decode(space.encode(cfg)) == cfg


@given(st.lists(st.floats(-0.5, 1.5), min_size=4, max_size=4))
def test_decode_stays_in_bounds(u):
    cfg = SearchSpace().decode(np.array(u))
    assert SearchSpace().contains(cfg)


def test_constant_objective_gives_constant_trace():
    res = bo_search(lambda cfg, seed: 0.5, n_init=3, n_iter=4, seed=0)
    assert res.trace == [0.5] * 7
    assert len(res.trials) == 7


def _quadratic(space, target):
    u_star = space.encode(target)
    return lambda cfg, seed: -float(np.sum((space.encode(cfg) - u_star) ** 2))


def test_search_is_deterministic_and_monotone():
    space = SearchSpace()
    f = _quadratic(space, {"alpha": 0.1, "steps": 4, "eta": 2.5, "epochs": 30})
    a = bo_search(f, space, 5, 6, seed=3)
    b = bo_search(f, space, 5, 6, seed=3)
    assert [t.to_json() for t in a.trials] == [t.to_json() for t in b.trials]
    assert all(x <= y for x, y in zip(a.trace, a.trace[1:]))
    for t in a.trials:
        assert space.contains(t.config)
        assert space.decode(np.array(t.point)) == t.config


def test_resume_matches_uninterrupted_run():
    space = SearchSpace()
    f = _quadratic(space, {"alpha": 0.3, "steps": 9, "eta": 2.0, "epochs": 50})
    full = bo_search(f, space, 5, 5, seed=1)
    calls = []

    def counting(cfg, seed):
        calls.append(cfg)
        return f(cfg, seed)

    resumed = bo_search(counting, space, 5, 5, seed=1, previous=[Trial.from_json(t.to_json()) for t in full.trials[:7]])
    assert len(calls) == 3
    assert [t.to_json() for t in resumed.trials] == [t.to_json() for t in full.trials]


def test_failed_trials_are_recorded_and_skipped():
    def flaky(cfg, seed):
        if cfg["steps"] > 8:
            raise RuntimeError("diverged")
        return cfg["alpha"]

    res = bo_search(flaky, n_init=5, n_iter=5, seed=2)
    assert len(res.trials) == 10
    failed = [t for t in res.trials if t.failed]
    assert failed and all("diverged" in t.error for t in failed)
    assert res.best is not None and not res.best.failed
    assert all(x <= y for x, y in zip(res.trace, res.trace[1:]) if not math.isinf(x))


def test_incumbent_trace_helper():
    trials = [_trial(0, [0], None), _trial(1, [0], 0.2), _trial(2, [0], 0.1), _trial(3, [0], 0.4)]
    assert incumbent_trace(trials) == [-math.inf, 0.2, 0.2, 0.4]
