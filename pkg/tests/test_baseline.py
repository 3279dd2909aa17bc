import math
import warnings

import numpy as np
import pytest
from scipy import stats

from conftest import heavy_tail_setup
from tailrate import baseline as bl
from tailrate import synth
from tailrate.bivariate import build_bgpd, frechet_from_probability, reference_angular_fit
from tailrate.errors import FitError
from tailrate.rate import rate_chain, select_rate
from tailrate.tail_fit import fit_gpd, validate_fit
from tailrate.trace import decluster


def test_fit_gaussian_recovers(rng):
    g = bl.fit_gaussian(rng.standard_normal(1_000_000))
    assert abs(g.mean) <= 0.003 and abs(g.std - 1) <= 0.003


def test_fit_gaussian_constant():
    with pytest.raises(FitError):
        bl.fit_gaussian(np.full(100, 2.0))
    with pytest.raises(FitError):
        bl.fit_gaussian(np.arange(10.0))


def test_aic_prefers_right_family(rng):
    def t_aic(x):
        df, loc, sc = stats.t.fit(x)
        return 6 - 2 * np.sum(stats.t.logpdf(x, df, loc, sc))
    gauss = rng.standard_normal(20_000)
    heavy = stats.t.rvs(3, size=20_000, random_state=rng)
    assert bl.fit_gaussian(gauss).aic < t_aic(gauss) + 2.0
    assert bl.fit_gaussian(heavy).aic > t_aic(heavy)


def test_gaussian_log_likelihood_matches_scipy(rng):
    x = rng.normal(3.0, 0.4, 1000)
    g = bl.fit_gaussian(x)
    assert g.log_likelihood == pytest.approx(np.sum(stats.norm.logpdf(x, g.mean, g.std)), rel=1e-12)
    ln = bl.fit_lognormal(np.exp(x))
    assert ln.log_likelihood == pytest.approx(
        np.sum(stats.lognorm.logpdf(np.exp(x), ln.params[1], scale=np.exp(ln.params[0]))), rel=1e-12)


def test_select_margin_by_aic(rng):
    best, fits = bl.select_margin(rng.lognormal(0, 0.8, 20_000))
    assert best.family == "lognormal" and set(fits) == set(bl.FAMILIES)
    best, fits = bl.select_margin(rng.normal(5.0, 0.3, 20_000))
    assert best.family == "gaussian"


def test_truncated_bulk_fit(rng):
    x = rng.normal(2.0, 0.5, 200_000)
    f = bl.fit_gaussian_bulk(x, 0.01)
    assert f.mean == pytest.approx(2.0, abs=0.01) and f.std == pytest.approx(0.5, abs=0.01)
    assert f.truncation == pytest.approx(np.quantile(x, 0.01))


def test_shared_code_path():
    # the baseline reuses the tail model's transforms and rate chain
    assert bl.frechet_from_probability is frechet_from_probability
    assert bl.rate_chain is rate_chain


def test_tail_probability_floor():
    m = bl.MarginFit("gaussian", (10.0, 0.1), 0.0, 100)
    p, capped = bl.margin_tail_probability(m, np.array([0.0, 9.9]))
    assert capped == 1 and p[0] > 0


def test_gaussian_data_rates_agree():
    g = synth.MarginSpec("gaussian", mu=5.0, s=0.5)
    spec = synth.SynthSpec(g, g, synth.DependenceSpec("logistic", 0.8), 100_000, 8)
    rx1, rx2 = synth.generate(spec)
    x, y = decluster(rx1, 1), decluster(rx2, 1)
    xt, _ = x.split(0.5)
    yt, _ = y.split(0.5)
    u = float(np.quantile(xt.values, 0.05))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        m = build_bgpd(xt, yt, u, u)
        m.reference = reference_angular_fit(x, y, u, u)
        b, _ = bl.build_baseline(xt, yt, u, u)
    assert b.margin_x.family == "gaussian"
    r_m = select_rate(m, 1e-3).rate_bits
    r_b = bl.baseline_rate(b, 1e-3, m.reference.beta).rate_bits
    assert abs(r_b - r_m) <= 0.1 * r_m
    # the Gaussian margin is the better bulk description on Gaussian data
    gpd = fit_gpd(xt, u)
    ks = stats.kstest(xt.values, lambda v: b.margin_x.cdf(v)).statistic
    assert ks < validate_fit(gpd, xt).max_pp_deviation


def test_heavy_tail_underflow_collapses_baseline():
    m, b, _ = heavy_tail_setup(400_000)
    for eps in (1e-3, 1e-4, 1e-5):
        r_m = select_rate(m, eps)
        r_b = bl.baseline_rate(b, eps, m.reference.beta)
        assert r_b.rate_bits <= r_m.rate_bits
        assert r_b.eps_n_underflow and r_b.rate_bits == 0.0
        assert r_m.rate_bits > 0.0 and not r_m.eps_n_underflow
        assert math.isnan(r_b.argument_a)
