"""Bootstrap (BCa) intervals for the tail parameters and their propagation to the rate."""
from __future__ import annotations

import enum
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .bivariate import BgpdModel, FrechetPair, build_bgpd, fit_angular, frechet_from_probability, pickands_transform
from .errors import ArgumentError, BootstrapError, FitError, IntervalError, NumericalError
from .rate import TINY, RateDecision
from .specfun import beta_inv_cdf, norm_cdf, norm_inv_cdf
from .tail_fit import (MIN_EXCEEDANCES, TailModel, fit_exceedances, profile_newton,
                       score_and_hessian_terms, tail_exceedances)

CHUNK = 64
MAX_FAIL_FRACTION = 0.01
EXACT_JACKKNIFE_LIMIT = 5000
PARAMS = ("sigma_x", "xi_x", "sigma_y", "xi_y")


class Method(str, enum.Enum):
    BCA = "BCA"
    PERCENTILE = "Percentile"
    NORMAL = "Normal"


@dataclass
class IntervalEstimate:
    point: float
    lower: float
    upper: float
    alpha: float
    method: Method = Method.BCA

    @property
    def point_outside(self) -> bool:
        return not self.lower <= self.point <= self.upper

    @property
    def width(self) -> float:
        return self.upper - self.lower

    def to_dict(self):
        return {"point": self.point, "lower": self.lower, "upper": self.upper, "alpha": self.alpha,
                "method": self.method.value, "point_outside": self.point_outside}


@dataclass
class BcaFactors:
    z0: float
    a: float
    B: int
    a1: float
    a2: float
    alpha: float = 0.05

    def to_dict(self):
        return {"z0": self.z0, "a": self.a, "B": self.B, "a1": self.a1, "a2": self.a2, "alpha": self.alpha}


@dataclass
class BootstrapSample:
    sigma: np.ndarray
    xi: np.ndarray
    requested: int
    failed: int


@dataclass
class RateInterval:
    decision: RateDecision
    rate_lower: float
    rate_upper: float
    alpha: float
    parameter_intervals: dict
    corner_rates: tuple = (math.nan, math.nan)
    corners_swapped: bool = False
    method: str = "corners"
    factors: dict = field(default_factory=dict)
    corner_capped: int = 0

    @property
    def point_outside(self) -> bool:
        return not self.rate_lower <= self.decision.rate_bits <= self.rate_upper

    def to_dict(self):
        return {"rate_bits": self.decision.rate_bits, "rate_lower": self.rate_lower,
                "rate_upper": self.rate_upper, "alpha": self.alpha, "method": self.method,
                "corner_rates": list(self.corner_rates), "corners_swapped": self.corners_swapped,
                "corner_capped": self.corner_capped,
                "point_outside": self.point_outside,
                "parameter_intervals": {k: v.to_dict() for k, v in self.parameter_intervals.items()},
                "bca_factors": {k: v.to_dict() for k, v in self.factors.items()}}


# --------------------------------------------------------------- resampling

def _exceedances(seq, u):
    e = tail_exceedances(seq, u)
    if e.size < MIN_EXCEEDANCES:
        raise FitError(f"only {e.size} exceedances below u={u:.6g}; need {MIN_EXCEEDANCES}")
    return e


def _fit_rows(E, s0, x0):
    sig, xi, _, ok = profile_newton(E, s0, x0)
    for r in np.flatnonzero(~ok):
        # slow path for the rare replicate the batched Newton could not settle
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                f = fit_exceedances(E[r], warn=False)
            sig[r], xi[r], ok[r] = f.sigma, f.xi, True
        except FitError:
            sig[r] = xi[r] = math.nan
    return sig, xi, ok


def _run_chunks(tasks, work, threads):
    if threads is None or threads <= 1:
        return [work(t) for t in tasks]
    with ThreadPoolExecutor(max_workers=int(threads)) as pool:
        return list(pool.map(work, tasks))


def bootstrap_exceedances(e, B: int, seed: int, stream=(), threads: int = 1, start=None) -> BootstrapSample:
    """``B`` resample-with-replacement GPD fits of the exceedances ``e``.

    Replicate ``b`` draws from ``default_rng([seed, *stream, b])`` and the
    replicates are fitted in fixed chunks, so the output does not depend on
    ``threads``.
    """
    if int(B) < 1:
        raise ArgumentError(f"bootstrap rounds must be positive, got {B}")
    B = int(B)
    if B < 200:
        warnings.warn(f"B={B} bootstrap rounds; at least 200 are recommended", stacklevel=2)
    e = np.asarray(e, dtype=float)
    m = e.size
    if start is None:
        f = fit_exceedances(e, warn=False)
        start = (f.sigma, f.xi)
    chunks = [(b0, min(b0 + CHUNK, B)) for b0 in range(0, B, CHUNK)]

    def work(ch):
        b0, b1 = ch
        E = np.empty((b1 - b0, m))
        for i, b in enumerate(range(b0, b1)):
            rng = np.random.default_rng([int(seed), *stream, b])
            E[i] = e[rng.integers(0, m, m)]
        return _fit_rows(E, *start)

    parts = _run_chunks(chunks, work, threads)
    sig = np.concatenate([p[0] for p in parts])
    xi = np.concatenate([p[1] for p in parts])
    ok = np.concatenate([p[2] for p in parts])
    failed = int(np.count_nonzero(~ok))
    if failed > MAX_FAIL_FRACTION * B:
        raise BootstrapError(f"{failed} of {B} bootstrap fits failed (limit {MAX_FAIL_FRACTION:.0%})")
    return BootstrapSample(sig[ok], xi[ok], B, failed)


def bootstrap_gpd(seq, u: float, B: int, seed: int, threads: int = 1, stream=()) -> BootstrapSample:
    """Bootstrap GPD fits of the exceedances of ``seq`` below ``u``."""
    return bootstrap_exceedances(_exceedances(seq, u), B, seed, stream, threads)


def _loo_one_step(e, s, x):
    """Leave-one-out estimates from one Newton step off the full optimum."""
    g, h = score_and_hessian_terms(e, s, x)
    G = g.sum(axis=0)
    H = h.sum(axis=0)
    Hj = H[None] - h
    rhs = G[None] - g
    det = Hj[:, 0, 0] * Hj[:, 1, 1] - Hj[:, 0, 1] * Hj[:, 1, 0]
    d_s = (Hj[:, 1, 1] * rhs[:, 0] - Hj[:, 0, 1] * rhs[:, 1]) / det
    d_x = (-Hj[:, 1, 0] * rhs[:, 0] + Hj[:, 0, 0] * rhs[:, 1]) / det
    return s - d_s, x - d_x


def jackknife_exceedances(e, mode: str = "loo", exact_limit: int = EXACT_JACKKNIFE_LIMIT,
                          threads: int = 1, start=None):
    """Jackknife GPD estimates ``(sigma_j, xi_j)``.

    ``mode="loo"`` leaves out each exceedance in turn (exact refits up to
    ``exact_limit`` exceedances, a one-step Newton update from the full
    optimum beyond). ``mode="first_j"`` drops the first ``j`` exceedances
    for ``j = 1 .. m - 30``.
    """
    e = np.asarray(e, dtype=float)
    m = e.size
    if m < MIN_EXCEEDANCES + 1:
        raise FitError(f"jackknife needs at least {MIN_EXCEEDANCES + 1} exceedances, got {m}")
    if start is None:
        f = fit_exceedances(e, warn=False)
        start = (f.sigma, f.xi)
    s0, x0 = start
    if mode == "first_j":
        out_s, out_x, bad = [], [], 0
        for j in range(1, m - MIN_EXCEEDANCES + 1):
            sig, xi, ok = _fit_rows(e[None, j:], s0, x0)
            bad += int(not ok[0])
            if ok[0]:
                out_s.append(sig[0])
                out_x.append(xi[0])
        total = m - MIN_EXCEEDANCES
        if bad > MAX_FAIL_FRACTION * total:
            raise BootstrapError(f"{bad} of {total} jackknife refits failed")
        return np.array(out_s), np.array(out_x)
    if mode != "loo":
        raise ArgumentError(f"unknown jackknife mode {mode!r}")
    if m > exact_limit:
        return _loo_one_step(e, s0, x0)
    base = np.arange(m - 1)
    chunks = [(j0, min(j0 + CHUNK, m)) for j0 in range(0, m, CHUNK)]

    def work(ch):
        j0, j1 = ch
        rows = np.arange(j0, j1)[:, None]
        return _fit_rows(e[base[None, :] + (base[None, :] >= rows)], s0, x0)

    parts = _run_chunks(chunks, work, threads)
    sig = np.concatenate([p[0] for p in parts])
    xi = np.concatenate([p[1] for p in parts])
    ok = np.concatenate([p[2] for p in parts])
    bad = int(np.count_nonzero(~ok))
    if bad > MAX_FAIL_FRACTION * m:
        raise BootstrapError(f"{bad} of {m} jackknife refits failed")
    return sig[ok], xi[ok]


def jackknife_gpd(seq, u: float, mode: str = "loo", threads: int = 1):
    return jackknife_exceedances(_exceedances(seq, u), mode=mode, threads=threads)


# ---------------------------------------------------------------- intervals

def bca_factors(theta_hat: float, boot, jack, alpha: float = 0.05) -> BcaFactors:
    boot = np.asarray(boot, dtype=float)
    jack = np.asarray(jack, dtype=float)
    if boot.size == 0:
        raise ArgumentError("empty bootstrap sample")
    if not 0.0 < alpha < 1.0:
        raise ArgumentError("alpha must lie in (0, 1)")
    B = boot.size
    m = int(np.count_nonzero(boot < theta_hat))
    if m == 0 or m == B:
        raise IntervalError(f"{m} of {B} bootstrap estimates lie below the point estimate; "
                            "bias correction is infinite, increase B")
    z0 = float(norm_inv_cdf(m / B))
    d = jack.mean() - jack
    s2 = float(np.sum(d * d))
    a = float(np.sum(d ** 3)) / (6.0 * s2 ** 1.5) if s2 > 0 else 0.0
    z = float(norm_inv_cdf(1.0 - alpha / 2.0))
    lo = z0 - z
    hi = z0 + z
    a1 = float(norm_cdf(z0 + lo / (1.0 - a * lo)))
    a2 = float(norm_cdf(z0 + hi / (1.0 - a * hi)))
    return BcaFactors(z0, a, B, a1, a2, alpha)


def order_rank(level: float, B: int) -> int:
    """Round-half-up rank of ``level * (B + 1)`` clamped to ``[1, B]``."""
    return min(max(int(math.floor(level * (B + 1) + 0.5)), 1), B)


def bca_interval(boot, factors: BcaFactors, point: float = math.nan) -> IntervalEstimate:
    s = np.sort(np.asarray(boot, dtype=float))
    B = s.size
    lo = s[order_rank(factors.a1, B) - 1]
    hi = s[order_rank(factors.a2, B) - 1]
    return IntervalEstimate(float(point), float(lo), float(hi), factors.alpha, Method.BCA)


def percentile_interval(boot, alpha: float, point: float = math.nan) -> IntervalEstimate:
    s = np.sort(np.asarray(boot, dtype=float))
    B = s.size
    lo = s[order_rank(alpha / 2.0, B) - 1]
    hi = s[order_rank(1.0 - alpha / 2.0, B) - 1]
    return IntervalEstimate(float(point), float(lo), float(hi), alpha, Method.PERCENTILE)


def normal_interval(point: float, se: float, alpha: float) -> IntervalEstimate:
    """Wald interval from an observed-information standard error."""
    z = float(norm_inv_cdf(1.0 - alpha / 2.0))
    return IntervalEstimate(point, point - z * se, point + z * se, alpha, Method.NORMAL)


@dataclass
class TailIntervals:
    sigma: IntervalEstimate
    xi: IntervalEstimate
    sigma_factors: BcaFactors
    xi_factors: BcaFactors
    boot: BootstrapSample


def tail_parameter_intervals(model: TailModel, seq, alpha: float, B: int, seed: int, stream=(),
                             threads: int = 1, jackknife_mode: str = "loo", boot=None, jack=None) -> TailIntervals:
    e = _exceedances(seq, model.threshold_u)
    start = (model.scale_sigma, model.shape_xi)
    if boot is None:
        boot = bootstrap_exceedances(e, B, seed, stream, threads, start)
    if jack is None:
        jack = jackknife_exceedances(e, jackknife_mode, threads=threads, start=start)
    fs = bca_factors(model.scale_sigma, boot.sigma, jack[0], alpha)
    fx = bca_factors(model.shape_xi, boot.xi, jack[1], alpha)
    return TailIntervals(bca_interval(boot.sigma, fs, model.scale_sigma),
                         bca_interval(boot.xi, fx, model.shape_xi), fs, fx, boot)


# ------------------------------------------------------------ propagation

def _corner_tail(tail: TailModel, sigma, xi) -> TailModel:
    return tail.with_params(sigma, xi)


def _corner_frechet(model: BgpdModel, tail_x: TailModel, tail_y: TailModel):
    """Frechet pair under substituted tails, flooring probabilities at the
    smallest normal float; a corner with a finite lower endpoint can put
    observed exceedances outside its support. Returns the pair and how
    many values were floored."""
    j = model.joint
    px = np.asarray(tail_x.tail_probability(j.x_exceed), dtype=float)
    py = np.asarray(tail_y.tail_probability(j.y_exceed), dtype=float)
    capped = int(np.count_nonzero(px < TINY) + np.count_nonzero(py < TINY))
    px, py = np.maximum(px, TINY), np.maximum(py, TINY)
    return FrechetPair(frechet_from_probability(px, j.indices), frechet_from_probability(py, j.indices),
                       j.n), capped


def corner_rate(model: BgpdModel, tail_x: TailModel, tail_y: TailModel, a: float, name: str):
    """Rate from the angular Beta refitted under substituted tail parameters,
    and the number of floored tail probabilities."""
    try:
        fr, capped = _corner_frechet(model, tail_x, tail_y)
        pk = pickands_transform(fr)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            ang = fit_angular(pk, symmetric=model.angular.symmetric, warn=False)
    except NumericalError as exc:
        raise IntervalError(f"{name} corner model is invalid: {exc}") from exc
    return math.log2(1.0 + float(beta_inv_cdf(a, ang.beta))), capped


def propagate_rate_interval(model: BgpdModel, decision: RateDecision, intervals: dict,
                            alpha: float) -> RateInterval:
    """Rate bounds from the extreme corners of the tail-parameter intervals.

    The lower corner pairs the upper scale and lower shape of X with the
    lower scale and upper shape of Y; the upper corner mirrors it. The
    angular argument (hence ``eps_n`` and ``max_r``) stays at its point
    value.
    """
    missing = [k for k in PARAMS if k not in intervals]
    if missing:
        raise ArgumentError(f"missing parameter intervals: {missing}")
    a = decision.argument_a
    if not 0.0 <= a <= 1.0:
        raise IntervalError("the point decision has no valid angular argument (eps_n underflow?)")
    sx, xx, sy, xy = (intervals[k] for k in PARAMS)
    lower_corner = (_corner_tail(model.tail_x, sx.upper, xx.lower), _corner_tail(model.tail_y, sy.lower, xy.upper))
    upper_corner = (_corner_tail(model.tail_x, sx.lower, xx.upper), _corner_tail(model.tail_y, sy.upper, xy.lower))
    r_lo, c_lo = corner_rate(model, *lower_corner, a, "lower")
    r_hi, c_hi = corner_rate(model, *upper_corner, a, "upper")
    return RateInterval(decision, min(r_lo, r_hi), max(r_lo, r_hi), alpha, dict(intervals),
                        (r_lo, r_hi), r_lo > r_hi, corner_capped=c_lo + c_hi)


def rate_interval(model: BgpdModel, decision: RateDecision, x_train, y_train, alpha: float = 0.05,
                  B: int = 1000, seed: int = 0, threads: int = 1, jackknife_mode: str = "loo",
                  boots=None) -> RateInterval:
    """BCa intervals for both tails, then corner propagation to the rate.

    ``boots`` may supply precomputed ``(boot_x, boot_y)`` and jackknife
    estimates so several ``alpha`` levels share one resampling run.
    """
    if boots is None:
        boots = resample_tails(model, x_train, y_train, B, seed, threads, jackknife_mode)
    (bx, jx), (by, jy) = boots
    tx = tail_parameter_intervals(model.tail_x, x_train, alpha, B, seed, boot=bx, jack=jx)
    ty = tail_parameter_intervals(model.tail_y, y_train, alpha, B, seed, boot=by, jack=jy)
    intervals = {"sigma_x": tx.sigma, "xi_x": tx.xi, "sigma_y": ty.sigma, "xi_y": ty.xi}
    out = propagate_rate_interval(model, decision, intervals, alpha)
    out.factors = {"sigma_x": tx.sigma_factors, "xi_x": tx.xi_factors,
                   "sigma_y": ty.sigma_factors, "xi_y": ty.xi_factors}
    return out


def resample_tails(model: BgpdModel, x_train, y_train, B: int, seed: int, threads: int = 1,
                   jackknife_mode: str = "loo"):
    out = []
    for ch, (tail, seq) in enumerate(((model.tail_x, x_train), (model.tail_y, y_train))):
        e = _exceedances(seq, tail.threshold_u)
        start = (tail.scale_sigma, tail.shape_xi)
        boot = bootstrap_exceedances(e, B, seed, (ch,), threads, start)
        jack = jackknife_exceedances(e, jackknife_mode, threads=threads, start=start)
        out.append((boot, jack))
    return tuple(out)


def full_bootstrap_rate_interval(model: BgpdModel, decision: RateDecision, x_train, y_train,
                                 alpha: float = 0.05, B: int = 200, seed: int = 0) -> RateInterval:
    """Percentile interval from refitting the whole model on resampled instants.

    Each round resamples training instants (pairs) with replacement,
    refits both tails at the same thresholds and the angular Beta, and
    evaluates the rate at the point angular argument.
    """
    if int(B) < 1:
        raise ArgumentError("bootstrap rounds must be positive")
    a = decision.argument_a
    if not 0.0 <= a <= 1.0:
        raise IntervalError("the point decision has no valid angular argument")
    xv = np.asarray(getattr(x_train, "values", x_train), dtype=float)
    yv = np.asarray(getattr(y_train, "values", y_train), dtype=float)
    n = xv.size
    rates = []
    failed = 0
    for b in range(int(B)):
        rng = np.random.default_rng([int(seed), 2, b])
        idx = rng.integers(0, n, n)
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                mb = build_bgpd(xv[idx], yv[idx], model.tail_x.threshold_u, model.tail_y.threshold_u,
                                symmetric=model.angular.symmetric, warn=False)
            rates.append(math.log2(1.0 + float(beta_inv_cdf(a, mb.angular.beta))))
        except NumericalError:
            failed += 1
    if failed > MAX_FAIL_FRACTION * B:
        raise BootstrapError(f"{failed} of {B} full-model bootstrap rounds failed")
    iv = percentile_interval(rates, alpha, decision.rate_bits)
    return RateInterval(decision, iv.lower, iv.upper, alpha, {}, method="full_bootstrap")


__all__ = [
    "IntervalEstimate", "BcaFactors", "RateInterval", "BootstrapSample", "Method",
    "bootstrap_gpd", "bootstrap_exceedances", "jackknife_gpd", "jackknife_exceedances",
    "bca_factors", "bca_interval", "percentile_interval", "normal_interval", "order_rank",
    "tail_parameter_intervals", "propagate_rate_interval", "rate_interval", "resample_tails",
    "full_bootstrap_rate_interval", "corner_rate",
]
