import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import optimize

from convsurv.aft import (
    FAMILIES,
    acceleration_factor,
    aft_hazard,
    aft_median,
    aft_median_from,
    aft_survival,
    aft_survival_curve,
    censored_log_likelihood,
    fit_aft,
    fit_aft_matrix,
)
from convsurv.errors import InvalidInput, SchemaMismatch
from convsurv.synthetic import sample_aft_times


def horizon_censored(family, n=2000, theta=(1.5, -0.5), sigma=0.5, frac=0.2, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=n)
    t = sample_aft_times(family, theta[0] + theta[1] * x, sigma, rng)
    c = np.quantile(t, 1.0 - frac)
    return x, np.minimum(t, c), t <= c


def test_survival_examples():
    assert aft_survival("weibull", math.log(4), 0.5, 2.0) == pytest.approx(math.exp(-0.25), abs=1e-12)
    assert aft_survival("lognormal", 0.0, 1.0, 1.0) == pytest.approx(0.5, abs=1e-12)
    assert aft_survival("loglogistic", 1.3, 0.7, math.exp(1.3)) == pytest.approx(0.5, abs=1e-12)
    with pytest.raises(InvalidInput):
        aft_survival("weibull", 0.0, 1.0, 0.0)
    with pytest.raises(InvalidInput):
        aft_survival("gamma", 0.0, 1.0, 1.0)


def test_hazard_examples():
    t = np.array([0.5, 1.0, 3.0, 7.0])
    assert np.allclose(aft_hazard("weibull", math.log(2.5), 1.0, t), 1 / 2.5, atol=1e-12)
    assert aft_hazard("weibull", 0.0, 0.5, 3.0) == pytest.approx(6.0, abs=1e-12)
    # far tail: log-normal hazard tends to w / (sigma t) instead of overflowing
    w = math.log(1e6) / 0.01
    assert aft_hazard("lognormal", 0.0, 0.01, 1e6) == pytest.approx(w / (0.01 * 1e6), rel=1e-3)


@pytest.mark.parametrize("family", FAMILIES)
@pytest.mark.parametrize("t", [0.3, 1.0, 2.5, 6.0])
def test_hazard_is_minus_dlogS(family, t):
    mu, sigma, h = 0.8, 0.6, 1e-6
    fd = -(math.log(aft_survival(family, mu, sigma, t + h)) - math.log(aft_survival(family, mu, sigma, t - h))) / (2 * h)
    assert aft_hazard(family, mu, sigma, t) == pytest.approx(fd, rel=1e-5)


def test_likelihood_examples():
    X = np.ones((3, 1))
    times, events = np.array([1.0, 4.0, 8.0]), np.zeros(3, bool)
    params = np.array([1.0, math.log(0.7)])
    ll = censored_log_likelihood("weibull", params, X, times, events)
    expected = sum(math.log(aft_survival("weibull", 1.0, 0.7, t)) for t in times)
    assert ll == pytest.approx(expected, rel=1e-12) and ll <= 0
    T = 3.0
    one = censored_log_likelihood("weibull", [math.log(T), 0.0], np.ones((1, 1)), [T], [True])
    assert one == pytest.approx(math.log(1 / T) - 1, abs=1e-12)


@pytest.mark.parametrize("family", FAMILIES)
def test_gradient_matches_finite_differences(family):
    rng = np.random.default_rng(42)
    X = np.column_stack([np.ones(40), rng.normal(size=(40, 2))])
    times = rng.integers(1, 9, size=40).astype(float)
    events = rng.random(40) < 0.6
    pen = np.array([0.0, 1.0, 1.0])
    for _ in range(10):
        params = np.concatenate([rng.normal(scale=0.5, size=3) + [1.0, 0, 0], [rng.normal(scale=0.3)]])
        _, g = censored_log_likelihood(family, params, X, times, events, 0.3, pen, gradient=True)
        h = 1e-5
        for j in range(params.size):
            e = np.zeros(params.size)
            e[j] = h
            fd = (censored_log_likelihood(family, params + e, X, times, events, 0.3, pen)
                  - censored_log_likelihood(family, params - e, X, times, events, 0.3, pen)) / (2 * h)
            assert g[j] == pytest.approx(fd, rel=1e-4, abs=1e-6)


@pytest.mark.parametrize("family", FAMILIES)
def test_fit_is_local_optimum(family):
    x, t, e = horizon_censored(family, n=300, seed=1)
    fit = fit_aft_matrix(x, t, e, family)
    Xi = np.column_stack([np.ones(x.size), x])
    best = np.concatenate([fit.coefficients, [fit.log_scale]])
    ll = censored_log_likelihood(family, best, Xi, t, e)
    for j in range(best.size):
        for d in (-0.1, 0.1):
            p = best.copy()
            p[j] += d
            assert censored_log_likelihood(family, p, Xi, t, e) <= ll


def test_intercept_only_matches_grid_mle():
    rng = np.random.default_rng(3)
    t = sample_aft_times("weibull", np.full(400, 1.2), 0.6, rng)
    fit = fit_aft_matrix(np.zeros((400, 0)), t, np.ones(400, bool), "weibull")

    def nll(v):
        lam, k = v
        z = t / lam
        return -np.sum(np.log(k / lam) + (k - 1) * np.log(z) - z**k)

    lam_grid = np.linspace(2.5, 4.5, 401)
    k_grid = np.linspace(1.2, 2.2, 401)
    L, K = np.meshgrid(lam_grid, k_grid, indexing="ij")
    z = t[None, None, :] / L[..., None]
    vals = np.sum(np.log(K / L)[..., None] + (K[..., None] - 1) * np.log(z) - z ** K[..., None], axis=-1)
    i, j = np.unravel_index(np.argmax(vals), vals.shape)
    lam_hat, k_hat = optimize.minimize(nll, [lam_grid[i], k_grid[j]], method="Nelder-Mead", options={"xatol": 1e-9, "fatol": 1e-12}).x
    assert math.exp(fit.coefficients[0]) == pytest.approx(lam_grid[i], abs=0.006)
    assert 1 / fit.sigma == pytest.approx(k_grid[j], abs=0.003)
    assert math.exp(fit.coefficients[0]) == pytest.approx(lam_hat, rel=1e-5)
    assert 1 / fit.sigma == pytest.approx(k_hat, rel=1e-5)


def test_zero_covariate_stays_zero():
    x, t, e = horizon_censored("weibull", n=500, seed=4)
    a = fit_aft_matrix(x, t, e)
    b = fit_aft_matrix(np.column_stack([x, np.zeros_like(x)]), t, e)
    assert b.coefficients[2] == 0.0
    assert np.allclose(a.coefficients, b.coefficients[:2], atol=1e-7)
    assert a.log_scale == pytest.approx(b.log_scale, abs=1e-7)


def test_all_censored_rejected():
    with pytest.raises(InvalidInput, match="censored"):
        fit_aft_matrix(np.ones(5), np.arange(1, 6), np.zeros(5, bool))


@pytest.mark.parametrize("family", FAMILIES)
def test_time_scaling_shifts_intercept(family):
    x, t, e = horizon_censored(family, n=1000, seed=5)
    a = fit_aft_matrix(x, t, e, family)
    b = fit_aft_matrix(x, 3.0 * t, e, family)
    assert b.coefficients[0] - a.coefficients[0] == pytest.approx(math.log(3.0), abs=0.02)
    assert np.allclose(b.coefficients[1:], a.coefficients[1:], atol=0.02)
    assert b.log_scale == pytest.approx(a.log_scale, abs=0.02)


def test_acceleration_factor_and_median():
    fit = fit_aft_matrix(*horizon_censored("weibull", n=200, seed=6))
    fit.coefficients = np.array([0.0, 0.0])
    assert acceleration_factor(fit, "x0") == 1.0
    fit.coefficients = np.array([0.0, math.log(0.15)])
    assert acceleration_factor(fit, "x0") == pytest.approx(0.15, abs=1e-12)
    with pytest.raises(InvalidInput):
        acceleration_factor(fit, "missing")
    assert aft_median_from("weibull", math.log(3), 1.0) == pytest.approx(3 * math.log(2), abs=1e-12)
    assert aft_median_from("lognormal", 0.0, 0.7) == 1.0
    assert aft_median_from("loglogistic", 1.1, 0.4) == pytest.approx(math.exp(1.1), abs=1e-12)
    for fam in FAMILIES:
        m = aft_median_from(fam, 0.9, 0.6)
        assert aft_survival(fam, 0.9, 0.6, m) == pytest.approx(0.5, abs=1e-12)


def test_survival_curve_edges():
    fit = fit_aft_matrix(*horizon_censored("weibull", n=200, seed=7))
    fit.coefficients = np.array([40.0, 0.0])
    assert aft_survival_curve(fit, [0.0], 8)(8) == pytest.approx(1.0, abs=1e-9)
    fit.coefficients = np.array([-40.0, 0.0])
    assert aft_survival_curve(fit, [0.0], 8)(1) == pytest.approx(0.0, abs=1e-9)
    fit.coefficients = np.array([1.2, 0.3])
    curve = aft_survival_curve(fit, [0.5], 8)
    direct = [aft_survival("weibull", 1.2 + 0.15, fit.sigma, t) for t in range(1, 9)]
    assert np.allclose(curve.survival[1:], direct, atol=0, rtol=1e-14)
    assert np.all(np.diff(curve.survival[1:]) < 0)
    with pytest.raises(SchemaMismatch):
        aft_survival_curve(fit, [0.5, 1.0], 8)


@settings(max_examples=30, deadline=None)
@given(st.sampled_from(FAMILIES), st.integers(0, 1000))
def test_median_ranking_matches_mu(family, seed):
    fit = fit_aft_matrix(*horizon_censored(family, n=100, seed=seed), family=family)
    z = np.random.default_rng(seed).normal(size=(20, 1))
    mu = fit.mu(z)
    medians = np.array([aft_median(fit, zi) for zi in z])
    assert np.array_equal(np.argsort(mu, kind="stable"), np.argsort(medians, kind="stable"))


def test_dataset_fit_and_round_trip(weibull_data):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        fit = fit_aft(weibull_data, "loglogistic", use_interactions=True, ridge_strength=1e-2)
    assert len(fit.names) == 46 and fit.penalized.sum() == 24
    assert fit.interaction_coefficients
    back = type(fit).from_json(fit.to_json())
    conv = weibull_data[1]
    assert np.array_equal(back.predict_survival(conv).survival, fit.predict_survival(conv).survival)
    assert np.allclose(np.exp(back.predict_log_survival(conv, 2)), back.predict_survival(conv, 2).survival, rtol=1e-12)
