"""Extrapolation benchmark: parametric whole-sample margins pushed into the tail.

Each channel gets a parametric fit on the full training sample (the
candidate with the lowest AIC wins). Its CDF then replaces the GPD tail
probability in the Fréchet map, and everything downstream reuses the
joint-tail code unchanged.
"""
from __future__ import annotations

import math
import sys
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, special

from .bivariate import (AngularModel, FrechetPair, JointTailSample, PickandsCoords, fit_angular,
                        frechet_from_probability, joint_filter, pickands_transform)
from .errors import ArgumentError, FitError
from .rate import RateDecision, rate_chain
from .serialize import content_hash
from .specfun import BetaParams
from .trace import IidSequence

FAMILIES = ("gaussian", "exponential", "lognormal")
_LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class MarginFit:
    """A fitted whole-sample margin.

    ``params`` are ``(mean, std)`` for ``gaussian``, ``(mean,)`` for
    ``exponential`` (exponential power, i.e. Rayleigh amplitude) and
    ``(mu, s)`` of the log for ``lognormal``.
    """

    family: str
    params: tuple
    log_likelihood: float
    n: int
    aic: float = math.nan
    bic: float = math.nan
    truncation: float | None = None

    def __post_init__(self):
        k = len(self.params)
        self.aic = 2 * k - 2 * self.log_likelihood
        self.bic = k * math.log(self.n) - 2 * self.log_likelihood

    @property
    def mean(self) -> float:
        return self.params[0]

    @property
    def std(self) -> float:
        return self.params[1] if self.family != "exponential" else self.params[0]

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        if self.family == "gaussian":
            out = special.ndtr((x - self.params[0]) / self.params[1])
        elif self.family == "exponential":
            out = -np.expm1(-np.maximum(x, 0.0) / self.params[0])
        else:
            with np.errstate(divide="ignore"):
                out = special.ndtr((np.log(np.maximum(x, 0.0)) - self.params[0]) / self.params[1])
        return out if out.ndim else float(out)

    def to_dict(self) -> dict:
        return {"family": self.family, "params": list(self.params), "log_likelihood": self.log_likelihood,
                "n": self.n, "aic": self.aic, "bic": self.bic, "truncation": self.truncation}


GaussianMargin = MarginFit


def _values(seq):
    return seq.values if isinstance(seq, IidSequence) else np.asarray(seq, dtype=float)


def fit_gaussian(seq) -> MarginFit:
    x = _values(seq)
    n = x.size
    if n < 30:
        raise FitError(f"Gaussian fit needs at least 30 samples, got {n}")
    mu = float(x.mean())
    sd = float(x.std())
    if not sd > 0:
        raise FitError("Gaussian fit on zero-variance data")
    ll = -0.5 * n * (_LOG_2PI + 2.0 * math.log(sd) + 1.0)
    return MarginFit("gaussian", (mu, sd), ll, n)


def fit_exponential(seq) -> MarginFit:
    x = _values(seq)
    if np.any(x <= 0):
        raise FitError("exponential margin needs positive power values")
    m = float(x.mean())
    return MarginFit("exponential", (m,), -x.size * (math.log(m) + 1.0), x.size)


def fit_lognormal(seq) -> MarginFit:
    x = _values(seq)
    if np.any(x <= 0):
        raise FitError("lognormal margin needs positive power values")
    lx = np.log(x)
    mu = float(lx.mean())
    s = float(lx.std())
    if not s > 0:
        raise FitError("lognormal fit on zero-variance data")
    ll = float(-lx.sum() - 0.5 * x.size * (_LOG_2PI + 2.0 * math.log(s) + 1.0))
    return MarginFit("lognormal", (mu, s), ll, x.size)


_FITTERS = {"gaussian": fit_gaussian, "exponential": fit_exponential, "lognormal": fit_lognormal}


def fit_gaussian_bulk(seq, bulk_quantile: float = 1e-3) -> MarginFit:
    """Gaussian fitted only to the samples above the ``bulk_quantile`` quantile.

    The likelihood is that of a normal left-truncated at the empirical
    quantile, so the deepest fades do not steer the fit.
    """
    x = _values(seq)
    c = float(np.quantile(x, bulk_quantile))
    kept = x[x >= c]
    start = fit_gaussian(kept)

    def nll(v):
        mu, sd = v[0], math.exp(v[1])
        zc = (c - mu) / sd
        tail = float(special.log_ndtr(-zc))
        z = (kept - mu) / sd
        return -(-0.5 * float(z @ z) - kept.size * (math.log(sd) + 0.5 * _LOG_2PI) - kept.size * tail)

    res = optimize.minimize(nll, np.array([start.params[0], math.log(start.params[1])]), method="Nelder-Mead",
                            options={"xatol": 1e-10, "fatol": 1e-10, "maxiter": 2000})
    if not res.success:
        raise FitError(f"truncated Gaussian fit did not converge: {res.message}")
    fit = MarginFit("gaussian", (float(res.x[0]), math.exp(res.x[1])), -float(res.fun), kept.size)
    fit.truncation = c
    return fit


def select_margin(seq, families=FAMILIES, criterion: str = "aic"):
    """Fit every candidate family and return ``(winner, all_fits)`` by AIC (or BIC)."""
    if criterion not in ("aic", "bic"):
        raise ArgumentError("criterion must be 'aic' or 'bic'")
    fits = {}
    for fam in families:
        if fam not in _FITTERS:
            raise ArgumentError(f"unknown margin family {fam!r}")
        try:
            fits[fam] = _FITTERS[fam](seq)
        except FitError:
            continue
    if not fits:
        raise FitError("no candidate margin could be fitted")
    best = min(fits.values(), key=lambda f: getattr(f, criterion))
    return best, fits


@dataclass
class ExtrapolatedModel:
    margin_x: MarginFit
    margin_y: MarginFit
    angular_ep: AngularModel
    frechet_ep: FrechetPair
    pickands_ep: PickandsCoords
    joint: JointTailSample = field(repr=False, default=None)
    n_capped: int = 0

    @property
    def max_r_ep(self) -> float:
        return self.pickands_ep.max_r

    def to_dict(self) -> dict:
        return {"margin_x": self.margin_x.to_dict(), "margin_y": self.margin_y.to_dict(),
                "p": self.angular_ep.beta.p, "q": self.angular_ep.beta.q, "max_r_ep": self.max_r_ep,
                "mean_omega": self.angular_ep.mean_omega, "n_capped": self.n_capped,
                "joint_count": self.joint.count}


def margin_tail_probability(margin: MarginFit, x):
    """Margin CDF floored at the smallest positive normal float.

    Returns the probabilities and how many were floored.
    """
    p = np.asarray(margin.cdf(x), dtype=float)
    capped = p < sys.float_info.min
    return np.where(capped, sys.float_info.min, p), int(np.count_nonzero(capped))


def extrapolate_and_transform(mx: MarginFit, my: MarginFit, joint: JointTailSample,
                              symmetric: bool = False) -> ExtrapolatedModel:
    px, cx = margin_tail_probability(mx, joint.x_exceed)
    py, cy = margin_tail_probability(my, joint.y_exceed)
    fr = FrechetPair(frechet_from_probability(px, joint.indices), frechet_from_probability(py, joint.indices),
                     joint.n)
    pk = pickands_transform(fr)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        ang = fit_angular(pk, symmetric=symmetric, warn=False)
    return ExtrapolatedModel(mx, my, ang, fr, pk, joint, cx + cy)


def build_baseline(x, y, ux: float, uy: float, families=FAMILIES, bulk_quantile: float | None = None,
                   symmetric: bool = False):
    """Margins by AIC on the full training sample, then the joint transform.

    ``bulk_quantile`` switches to a Gaussian fitted above that quantile.
    """
    if bulk_quantile is not None:
        mx, my = fit_gaussian_bulk(x, bulk_quantile), fit_gaussian_bulk(y, bulk_quantile)
        cands = ({"gaussian": mx}, {"gaussian": my})
    else:
        (mx, cx), (my, cy) = select_margin(x, families), select_margin(y, families)
        cands = (cx, cy)
    joint = joint_filter(x, y, ux, uy)
    return extrapolate_and_transform(mx, my, joint, symmetric), cands


def baseline_rate(model: ExtrapolatedModel, eps: float, test_angular: BetaParams) -> RateDecision:
    """Same quantile chain as the tail model; an underflowing ``eps_n`` gives a flagged rate 0."""
    return rate_chain(model.max_r_ep, model.angular_ep.beta, test_angular, eps,
                      content_hash(model.to_dict()), on_underflow="flag")
