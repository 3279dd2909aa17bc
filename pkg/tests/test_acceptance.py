"""End-to-end acceptance checks; each prints one PASS/FAIL line."""
import math
import time
import warnings

import numpy as np
import pytest
from scipy import special, stats

from tailrate import synth
from tailrate.baseline import baseline_rate
from tailrate.bivariate import bgpd_cdf, build_bgpd, frechet_from_probability, reference_angular_fit
from tailrate.cli import main
from tailrate.confidence import (bca_factors, bca_interval, bootstrap_exceedances, jackknife_exceedances,
                                 percentile_interval, rate_interval)
from tailrate.pipeline import choose_threshold
from tailrate.rate import assess_outage, invert_bgpd, select_rate
from tailrate.specfun import BetaParams, beta_inv_cdf, norm_cdf, norm_inv_cdf
from tailrate.tail_fit import fit_exceedances, fit_gpd
from tailrate.trace import decluster

from conftest import gpd_lower_sample, heavy_tail_setup

EPS_GRID = (1e-3, 1e-4, 1e-5)
TRUE_U = synth.MarginSpec().threshold


def _channels(n_total, seed, theta=0.8):
    rx1, rx2 = synth.generate(synth.example_spec(n_total, seed, theta))
    return decluster(rx1, 1), decluster(rx2, 1)


def test_gpd_recovery(verdict):
    rng = np.random.default_rng(2024)
    e = 0.0 - gpd_lower_sample(rng, 100_000, 0.0, 1.0, -0.2)
    t0 = time.perf_counter()
    fit = fit_exceedances(e)
    dt = time.perf_counter() - t0
    ok = abs(fit.sigma - 1.0) <= 0.02 and abs(fit.xi + 0.2) <= 0.015 and dt < 5.0
    verdict(1, ok, f"sigma={fit.sigma:.5f} xi={fit.xi:.5f} time={dt:.2f}s")


def _bisect_beta_quantile(u, p, q):
    lo, hi = 0.0, 1.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if special.betainc(p, q, mid) < u:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-15:
            break
    return 0.5 * (lo + hi)


def test_special_function_oracles(verdict):
    pairs = [(0.5, 0.5), (0.5, 3.0), (1.0, 1.0), (1.0, 5.0), (2.0, 2.0), (2.0, 8.0),
             (3.0, 0.7), (5.0, 5.0), (8.0, 2.0), (20.0, 20.0), (0.3, 12.0), (50.0, 7.0)]
    levels = [1e-6, 1e-3, 0.01, 0.1, 0.3, 0.5, 0.7, 0.9, 0.999]
    oracle = {(p, q, u): _bisect_beta_quantile(u, p, q) for p, q in pairs for u in levels}
    t0 = time.perf_counter()
    err_beta = max(abs(float(beta_inv_cdf(u, BetaParams(p, q))) - w) for (p, q, u), w in oracle.items())
    u = np.concatenate([10.0 ** -np.arange(1, 300, 7.0), np.linspace(0.01, 0.99, 99)])
    err_u = float(np.max(np.abs(norm_cdf(norm_inv_cdf(u)) - u) / u))
    z = np.linspace(-8.0, 3.0, 221)
    err_z = float(np.max(np.abs(norm_inv_cdf(norm_cdf(z)) - z)))
    dt = time.perf_counter() - t0
    ok = err_beta <= 1e-10 and err_u < 1e-12 and err_z < 1e-12 and dt < 1.0
    verdict(2, ok, f"beta_inv max err={err_beta:.2e} normal round-trip rel={err_u:.2e} abs={err_z:.2e} "
                   f"time={dt:.3f}s")


def test_frechet_margin(verdict):
    # exceedance probabilities are uniform on (0, zeta), so the transformed
    # values follow the unit Frechet law restricted to (t_u, inf)
    rng = np.random.default_rng(77)
    n, zeta = 200_000, 0.05
    m_exc = int(n * zeta)
    x = np.concatenate([gpd_lower_sample(rng, m_exc, 0.0, 1.0, -0.2), rng.uniform(0.0, 5.0, n - m_exc)])
    model = fit_gpd(x, 0.0)
    xt = np.sort(frechet_from_probability(model.tail_probability(x[x < 0.0])))
    t_u = -1.0 / math.log1p(-model.zeta)
    base = math.exp(-1.0 / t_u)
    law = (np.exp(-1.0 / xt) - base) / (1.0 - base)
    k = np.arange(1, xt.size + 1) / xt.size
    d = float(max(np.max(np.abs(k - law)), np.max(np.abs(k - 1.0 / xt.size - law))))
    verdict(3, d < 0.025, f"n_exceed={xt.size} sup-distance={d:.4f}")


def test_inversion_reproduces_eps_n(verdict):
    worst = 0.0
    for seed, theta in ((21, 0.5), (22, 0.8), (23, 0.95)):
        x, y = _channels(100_000, seed, theta)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            model = build_bgpd(x, y, TRUE_U, TRUE_U, warn=False)
        model.reference = reference_angular_fit(x, y, TRUE_U, TRUE_U)
        for eps in EPS_GRID:
            d = select_rate(model, eps)
            w = invert_bgpd(model, d.eps_n)
            g = float(bgpd_cdf(model, 1.0, (1.0 - w) / w))
            worst = max(worst, abs(g - d.eps_n) / d.eps_n)
    verdict(4, worst <= 1e-8, f"max relative mismatch={worst:.2e} over 3 models x 3 eps")


def test_outage_constraint(verdict):
    t0 = time.perf_counter()
    n_train, n_test, eps = 200_000, 10_000_000, 1e-4
    x, y = _channels(n_train + n_test, 5)
    xt, yt = x.head(n_train), y.head(n_train)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        ux, uy = choose_threshold(xt, "rx1")[0], choose_threshold(yt, "rx2")[0]
        model = build_bgpd(xt, yt, ux, uy, warn=False)
    model.reference = reference_angular_fit(x, y, ux, uy)
    d = select_rate(model, eps)
    rep = assess_outage(d, x.tail_from(n_train), y.tail_from(n_train), model)
    dt = time.perf_counter() - t0
    limit = eps * n_test + 3.0 * math.sqrt(eps * (1 - eps) * n_test)
    ok = rep.n_test == n_test and rep.violations <= limit and dt < 60.0
    verdict(5, ok, f"rate={d.rate_bits:.5f} violations={rep.violations} limit={limit:.1f} time={dt:.1f}s")


def test_rate_monotone_and_plateau(verdict):
    # thresholds fixed at the known splice point; see the README on why
    # automatic selection can move between training sizes
    worst, monotone = 0.0, True
    for seed in (1, 2, 3):
        x, y = _channels(1_000_000, seed)
        ref = reference_angular_fit(x, y, TRUE_U, TRUE_U)
        rates = {}
        for n in (100_000, 500_000):
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                model = build_bgpd(x.head(n), y.head(n), TRUE_U, TRUE_U, warn=False)
            model.reference = ref
            rates[n] = [select_rate(model, eps).rate_bits for eps in EPS_GRID]
            monotone &= rates[n][0] >= rates[n][1] >= rates[n][2]
        for a, b in zip(rates[100_000], rates[500_000]):
            worst = max(worst, abs(a - b) / max(a, b))
    verdict(6, monotone and worst < 0.01, f"monotone={monotone} max relative change 1e5->5e5={worst:.2e}")


def test_tail_model_beats_extrapolation(verdict):
    model, base, _ = heavy_tail_setup(1_000_000)
    rows = []
    for eps in EPS_GRID:
        dm = select_rate(model, eps)
        db = baseline_rate(base, eps, model.reference.beta)
        ratio = math.inf if db.rate_bits == 0 else dm.rate_bits / db.rate_bits
        rows.append((eps, dm.rate_bits, db.rate_bits, ratio, db.eps_n_underflow))
    above = all(m > b for _, m, b, _, _ in rows)
    big = any(r > 10 for *_, r, _ in rows)
    collapse = any(b == 0.0 and flag for _, _, b, _, flag in rows)
    detail = "; ".join(f"eps={e:g} mevt={m:.4g} base={b:.4g} ratio={r:.3g} underflow={f}" for e, m, b, r, f in rows)
    verdict(7, above and big and collapse, detail)


@pytest.mark.filterwarnings("ignore")
def test_bca_coverage_and_nesting(verdict):
    reps, n, B, xi_true = 500, 2000, 1000, -0.2
    covered, nested = 0, True
    for r in range(reps):
        e = stats.genpareto.rvs(xi_true, scale=1.0, size=n, random_state=10_000 + r)
        fit = fit_exceedances(e, warn=False)
        boot = bootstrap_exceedances(e, B, seed=r, start=(fit.sigma, fit.xi))
        jack = jackknife_exceedances(e, start=(fit.sigma, fit.xi))
        ivs = [bca_interval(boot.xi, bca_factors(fit.xi, boot.xi, jack[1], a)) for a in (0.05, 0.2, 0.5)]
        covered += ivs[0].lower <= xi_true <= ivs[0].upper
        nested &= all(w.lower <= m.lower and m.upper <= w.upper for w, m in zip(ivs, ivs[1:]))
    coverage = covered / reps
    # symmetric replicates and equal jackknife values give z0 = a = 0
    sym = np.random.default_rng(5).standard_normal(1000)
    sym = np.concatenate([sym, -sym])
    equal = True
    for a in (0.05, 0.2, 0.5):
        f = bca_factors(0.0, sym, np.ones(30), a)
        b, p = bca_interval(sym, f), percentile_interval(sym, a)
        equal &= f.z0 == 0.0 and f.a == 0.0 and (b.lower, b.upper) == (p.lower, p.upper)
    ok = 0.92 <= coverage <= 0.98 and nested and equal
    verdict(8, ok, f"coverage={coverage:.3f} nested on every run={nested} bca==percentile at z0=a=0: {equal}")


@pytest.mark.filterwarnings("ignore")
def test_rate_interval_shrinks(verdict):
    widths = {10_000: [], 500_000: []}
    for seed in range(50):
        x, y = _channels(600_000, 300 + seed)
        ref = reference_angular_fit(x, y, TRUE_U, TRUE_U)
        for n in widths:
            xt, yt = x.head(n), y.head(n)
            model = build_bgpd(xt, yt, TRUE_U, TRUE_U, warn=False)
            model.reference = ref
            d = select_rate(model, 1e-3)
            ri = rate_interval(model, d, xt, yt, 0.05, B=200, seed=seed)
            widths[n].append(ri.rate_upper - ri.rate_lower)
    small, large = float(np.median(widths[10_000])), float(np.median(widths[500_000]))
    verdict(9, large < small, f"median width n=1e4: {small:.5f}, n=5e5: {large:.5f}")


def test_run_is_deterministic(verdict, tmp_path):
    src = tmp_path / "in.csv"
    assert main(["synth", "-o", str(src), "--n", "40000", "--seed", "8"]) == 0
    common = ["run", "-i", str(src), "-B", "200", "--eps", "1e-3,1e-4", "--seed", "4"]
    outs = []
    for name, threads in (("a", "1"), ("b", "1"), ("c", "8")):
        assert main(common + ["-o", str(tmp_path / name), "--threads", threads]) == 0
        outs.append({p.name: p.read_bytes() for p in sorted((tmp_path / name).iterdir())})
    same_rerun = outs[0] == outs[1]
    same_threads = outs[0] == outs[2]
    verdict(10, same_rerun and same_threads and len(outs[0]) > 10,
            f"{len(outs[0])} files; rerun identical={same_rerun}; threads 1 vs 8 identical={same_threads}")
