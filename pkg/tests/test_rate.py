import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import toy_model
from tailrate import synth
from tailrate.bivariate import angular_components, bgpd_cdf_at_angle, build_bgpd, reference_angular_fit
from tailrate.errors import ArgumentError, DomainError
from tailrate.rate import (EpsUnderflowError, RateDecision, angular_argument, assess_outage, compute_eps_n,
                           eps_n_from, invert_bgpd, rate_chain, select_rate)
from tailrate.specfun import BetaParams, beta_cdf, beta_inv_cdf
from tailrate.trace import decluster


def test_eps_n_fixed_point():
    b = BetaParams(1.7, 2.4)
    for eps in (1e-3, 1e-4, 1e-5):
        h = beta_cdf(beta_inv_cdf(eps, b), b)
        m = toy_model(max_r=2.0 * h / math.log(eps), p=b.p, q=b.q)
        assert compute_eps_n(m, b, eps) == pytest.approx(eps, rel=1e-10)


def test_eps_n_one_when_train_probability_vanishes():
    eps_n, _, h = eps_n_from(-0.01, BetaParams(400.0, 1.0), BetaParams(1.0, 1.0), 1e-4)
    assert h == 0.0 and eps_n == 1.0


def test_invert_trivial_points():
    m = toy_model(max_r=-2.0, p=2.0, q=3.0)
    assert invert_bgpd(m, 1.0) == 0.0
    assert invert_bgpd(m, math.exp(-1.0)) == pytest.approx(1.0, abs=1e-12)


def test_angular_argument_domain():
    with pytest.raises(DomainError, match="max_r"):
        angular_argument(-0.01, 1e-300)
    with pytest.raises(DomainError):
        angular_argument(-1.0, 0.0)


@settings(max_examples=60)
@given(st.floats(-5.0, -1e-4), st.floats(0.3, 20), st.floats(0.3, 20), st.floats(0.01, 0.999))
def test_forward_model_reproduces_eps_n(max_r, p, q, frac):
    m = toy_model(max_r=max_r, p=p, q=q)
    eps_n = math.exp(2.0 * frac / max_r)    # keeps a = frac inside [0, 1]
    w = invert_bgpd(m, eps_n)
    assert bgpd_cdf_at_angle(m, w) == pytest.approx(eps_n, rel=1e-8)


def test_rate_endpoints():
    b = BetaParams(1.0, 1.0)
    zero = rate_chain(-0.01, BetaParams(400.0, 1.0), b, 1e-4)
    assert zero.angular_quantile == 0.0 and zero.rate_bits == 0.0
    m = toy_model(max_r=-2.0, p=2.0, q=2.0)
    d = rate_chain(m.max_r, BetaParams(2.0, 2.0), BetaParams(1.0, 1.0), 1.0 - 1e-15)
    assert d.rate_bits == pytest.approx(math.log2(1 + d.angular_quantile))
    # H^-1(1) = 1 -> one bit
    assert math.log2(1 + beta_inv_cdf(1.0, BetaParams(2.0, 2.0))) == 1.0


def test_underflow_raise_or_flag():
    b = BetaParams(2.0, 2.0)
    with pytest.raises(EpsUnderflowError):
        rate_chain(-1e-6, b, b, 1e-3)
    d = rate_chain(-1e-6, b, b, 1e-3, on_underflow="flag")
    assert d.eps_n_underflow and d.rate_bits == 0.0


def test_eps_validation():
    m = toy_model(ref=BetaParams(2, 2))
    for bad in (0.0, 1.0, -1e-3):
        with pytest.raises(ArgumentError):
            select_rate(m, bad)


def test_select_rate_needs_test_angular():
    with pytest.raises(ArgumentError):
        select_rate(toy_model(), 1e-3)


@pytest.fixture(scope="module")
def fitted():
    out = []
    for seed, theta in ((1, 0.8), (2, 0.6), (3, 0.9)):
        spec = synth.example_spec(200_000, seed, theta)
        rx1, rx2 = synth.generate(spec)
        x, y = decluster(rx1, 1), decluster(rx2, 1)
        u = spec.margin_x.threshold
        xt, xs = x.split(0.5)
        yt, ys = y.split(0.5)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            m = build_bgpd(xt, yt, u, u)
            m.reference = reference_angular_fit(x, y, u, u)
        out.append((m, xs, ys))
    return out


def test_rate_monotone_in_eps(fitted):
    for m, _, _ in fitted:
        r = [select_rate(m, e).rate_bits for e in (1e-3, 1e-4, 1e-5)]
        assert r[0] >= r[1] >= r[2]
        grid = np.geomspace(1e-6, 0.05, 40)
        rates = [select_rate(m, e).rate_bits for e in grid]
        assert np.all(np.diff(rates) >= 0)


def test_quantile_chain_consistency(fitted):
    for m, _, _ in fitted:
        for e in (1e-3, 1e-4, 1e-5):
            d = select_rate(m, e)
            assert beta_cdf(d.angular_quantile, m.angular.beta) == pytest.approx(
                0.5 * d.max_r * math.log(d.eps_n), abs=1e-10)


def test_outage_zero_rate(fitted):
    m, xs, ys = fitted[0]
    d = RateDecision(1e-3, 1.0, 0.0, 0.0, m.max_r, "")
    assert assess_outage(d, xs, ys, m).empirical_outage == 0.0


def test_outage_at_test_quantile(fitted):
    # rate from the angular quantile of one held-out half, outage on the other
    m, xs, ys = fitted[0]
    tails = (m.reference.tail_x, m.reference.tail_y)
    half = xs.n // 2
    eps = 2e-3
    _, w_a = angular_components(xs.values[:half], ys.values[:half], *tails)
    k = int(eps * half)
    q = np.sort(w_a)[k]
    d = RateDecision(eps, 1.0, q, math.log2(1 + q), m.max_r, "")
    rep = assess_outage(d, xs.values[half:], ys.values[half:], m)
    n_b = xs.n - half
    assert abs(rep.empirical_outage - eps) <= 3 * math.sqrt(eps / n_b) + 3 * math.sqrt(eps / half)


def test_model_outage_not_above_eps(fitted):
    for m, xs, ys in fitted:
        for e in (1e-3, 1e-4, 1e-5):
            rep = assess_outage(select_rate(m, e), xs, ys, m)
            if rep.satisfied:
                assert rep.model_outage <= e * (1 + 1e-9)


def test_radial_mode_reports_domain_mismatch(fitted):
    m, xs, ys = fitted[0]
    rep = assess_outage(select_rate(m, 1e-3), xs, ys, m, z_mode="radial")
    assert rep.z_mode == "radial" and 0.0 <= rep.z_domain_mismatch <= 1.0
    with pytest.raises(ArgumentError):
        assess_outage(select_rate(m, 1e-3), xs, ys, m, z_mode="bogus")
