import math
import time
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from conftest import gpd_lower_sample
from tailrate.errors import DomainError, FitError
from tailrate.tail_fit import (DiagnosticsWarning, TailModel, fit_exceedances, fit_gpd, gpd_cdf, gpd_loglik,
                               gpd_quantile, mrl_diagnostic, observed_information, pwm_estimate,
                               stability_diagnostic, threshold_diagnostics, validate_fit)


def test_fit_recovers_gpd(rng):
    x = gpd_lower_sample(rng, 100_000, 0.0, 1.0, -0.2)
    t0 = time.perf_counter()
    m = fit_gpd(np.append(x, [1.0]), 0.0)
    assert time.perf_counter() - t0 < 5.0
    assert 0.99 <= m.scale_sigma <= 1.01
    assert -0.21 <= m.shape_xi <= -0.19


def test_fit_matches_scipy_likelihood(rng):
    e = stats.genpareto.rvs(-0.2, scale=1.0, size=5000, random_state=rng)
    ours = fit_exceedances(e)
    c, loc, s = stats.genpareto.fit(e, floc=0.0)
    assert ours.log_likelihood >= gpd_loglik(e, s, c) - 1e-6
    assert ours.xi == pytest.approx(c, abs=2e-3)


def test_fit_exponential_tail(rng):
    e = rng.exponential(1.0, 100_000)
    fit = fit_exceedances(e)
    assert -0.01 <= fit.xi <= 0.01


def test_repeated_value_is_fit_error():
    with pytest.raises(FitError):
        fit_gpd(np.r_[np.full(100, 1.0), 5.0], 2.0)


def test_too_few_exceedances():
    with pytest.raises(FitError):
        fit_gpd(np.arange(100.0), 10.0)


def test_never_worse_than_pwm_start(rng):
    for seed in range(10):
        e = stats.genpareto.rvs(-0.3 + 0.05 * seed, size=300, random_state=seed)
        fit = fit_exceedances(e)
        assert fit.log_likelihood >= fit.init_log_likelihood - 1e-9


def test_zeta_times_n_equals_count(rng):
    x = rng.normal(size=12_345)
    m = fit_gpd(x, -1.0)
    assert m.zeta * m.n_total == pytest.approx(m.n_exceed, abs=1e-9)
    assert m.n_exceed == int(np.sum(x < -1.0))


def test_scale_equivariance(rng):
    x = gpd_lower_sample(rng, 5000, 2.0, 0.7, -0.15)
    a = fit_gpd(np.append(x, 3.0), 2.0)
    c = 3.7
    b = fit_gpd(np.append(c * x, c * 3.0), c * 2.0)
    assert b.scale_sigma == pytest.approx(c * a.scale_sigma, rel=1e-8)
    assert b.shape_xi == pytest.approx(a.shape_xi, abs=1e-8)


def test_information_matches_numeric_hessian(rng):
    e = stats.genpareto.rvs(-0.2, size=2000, random_state=rng)
    f = fit_exceedances(e)
    info = observed_information(e, f.sigma, f.xi)
    h = 1e-5
    num = np.zeros((2, 2))
    p0 = np.array([f.sigma, f.xi])
    for i in range(2):
        for j in range(2):
            def ll(di, dj):
                p = p0.copy()
                p[i] += di
                p[j] += dj
                return gpd_loglik(e, *p)
            num[i, j] = -(ll(h, h) - ll(h, -h) - ll(-h, h) + ll(-h, -h)) / (4 * h * h)
    assert np.allclose(info, num, rtol=1e-4)


def _model(sigma=1.0, xi=-0.2, u=0.0):
    return TailModel(u, sigma, xi, 0.05, 100, 0.0, 2000)


def test_cdf_trivial_values():
    assert gpd_cdf(_model(), 0.0) == 0.0
    m = _model(sigma=0.8, xi=0.0)
    assert gpd_cdf(m, -0.8) == pytest.approx(1 - math.exp(-1), abs=1e-12)
    m = _model(sigma=0.8, xi=1e-9)
    assert gpd_cdf(m, -0.8) == pytest.approx(0.6321205588285577, abs=1e-9)


def test_cdf_domain():
    with pytest.raises(DomainError):
        gpd_cdf(_model(), 0.5)
    with pytest.raises(DomainError):
        gpd_cdf(_model(), -10.0)


def test_quantile_round_trip():
    for xi in (-0.4, -0.2, 0.0, 0.3):
        m = _model(xi=xi)
        g = np.linspace(0, 0.999, 1000)
        assert np.max(np.abs(gpd_cdf(m, gpd_quantile(m, g)) - g)) < 1e-10


@settings(max_examples=40)
@given(st.floats(0.1, 5), st.floats(-0.9, 0.9))
def test_cdf_nondecreasing(sigma, xi):
    m = _model(sigma, xi)
    top = min(m.upper_exceedance, 50 * sigma)
    e = np.linspace(0, top, 200)
    assert np.all(np.diff(gpd_cdf(m, -e)) >= 0)


def test_pwm_reasonable(rng):
    e = stats.genpareto.rvs(-0.2, size=50_000, random_state=rng)
    s, x = pwm_estimate(e)
    assert s == pytest.approx(1.0, abs=0.05) and x == pytest.approx(-0.2, abs=0.05)


def test_mrl_flat_for_exponential(rng):
    x = -rng.exponential(1.0, 1_000_000)
    d = mrl_diagnostic(x, {"q_low": 0.01, "q_high": 0.5, "count": 15})
    means = np.array([r[1] for r in d.mrl_curve])
    hw = np.array([r[2] for r in d.mrl_curve])
    assert np.all(np.abs(means - 1.0) <= hw + 1e-3)


def test_mrl_slope_matches_shape(rng):
    xi = -0.2
    x = gpd_lower_sample(rng, 1_000_000, 0.0, 1.0, xi)
    d = mrl_diagnostic(x, {"q_low": 0.05, "q_high": 0.9, "count": 20})
    a = np.array(d.mrl_curve)
    slope = np.polyfit(a[:, 0], a[:, 1], 1)[0]
    assert slope == pytest.approx(-xi / (1 - xi), abs=0.01)


def test_mrl_insufficient_data():
    with pytest.warns(DiagnosticsWarning):
        d = mrl_diagnostic(np.arange(10.0))
    assert d.mrl_curve == [] and d.suggested_u is None


def test_stability_constant_below_true_threshold(rng):
    u0 = 0.0
    tail = gpd_lower_sample(rng, 50_000, u0, 1.0, -0.2)
    bulk = u0 + np.abs(rng.normal(0, 1, 950_000))
    x = np.concatenate([tail, bulk])
    grid = np.quantile(tail, [0.3, 0.5, 0.7, 0.9, 0.999])
    d = stability_diagnostic(x, grid)
    a = np.array(d.stability_curves)
    assert np.all(np.abs(a[:, 1] - (-0.2)) <= a[:, 3])
    assert np.all(np.abs(a[:, 2] - 1.0) <= a[:, 4])


def test_stability_single_point(rng):
    x = rng.normal(size=10_000)
    d = stability_diagnostic(x, [-1.0])
    assert len(d.stability_curves) == 1 and d.suggested_u == -1.0


def test_auto_threshold_near_splice(example_pair):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        d = threshold_diagnostics(example_pair[0])
    from tailrate.synth import MarginSpec
    u_true = MarginSpec().threshold
    assert d.suggested_u is not None
    assert d.suggested_u <= u_true * 1.01


def test_validate_self_sampled(rng):
    m = _model(1.0, -0.2)
    x = gpd_lower_sample(rng, 10_000, 0.0, 1.0, -0.2)
    fd = validate_fit(m, x)
    assert fd.max_pp_deviation < 0.02 and fd.passed
    wrong = _model(1.0, 0.3)
    assert validate_fit(wrong, x).max_pp_deviation > 0.05


def test_validate_empty():
    fd = validate_fit(_model(), np.array([1.0, 2.0]))
    assert fd.pp_points.shape == (0, 2) and fd.max_pp_deviation == 0.0
