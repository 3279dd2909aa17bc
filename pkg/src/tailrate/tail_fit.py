"""Lower-tail generalized Pareto modelling of a declustered channel.

Exceedances are measured downward: for a threshold ``u`` and a sample
``x < u`` the exceedance is ``e = u - x >= 0``.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .errors import DomainError, FitError
from .trace import IidSequence

MIN_EXCEEDANCES = 30
XI_EXP_LIMIT = 1e-6
XI_WARN = -0.5
XI_BOUNDS = (-1.0, 1.0)

_SERIES_RADIUS = 0.01
_SERIES_TERMS = 10


class GpdShapeWarning(UserWarning):
    """Estimated shape at or below -0.5 where the MLE is irregular."""


class DiagnosticsWarning(UserWarning):
    pass


@dataclass
class TailModel:
    """Fitted lower-tail GPD of one channel."""

    threshold_u: float
    scale_sigma: float
    shape_xi: float
    zeta: float
    n_exceed: int
    log_likelihood: float
    n_total: int = 0
    covariance: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if not self.scale_sigma > 0:
            raise FitError(f"GPD scale must be positive, got {self.scale_sigma}")

    @property
    def upper_exceedance(self) -> float:
        """Largest admissible exceedance (finite only for negative shape)."""
        return -self.scale_sigma / self.shape_xi if self.shape_xi < 0 else math.inf

    @property
    def standard_errors(self):
        if self.covariance is None:
            return (math.nan, math.nan)
        return tuple(float(v) for v in np.sqrt(np.diag(self.covariance)))

    def exceedances(self, x):
        return self.threshold_u - np.asarray(x, dtype=float)

    def survival(self, e):
        """``[1 + xi*e/sigma]^(-1/xi)``, the probability of exceeding ``e`` given ``e >= 0``."""
        return gpd_survival(e, self.scale_sigma, self.shape_xi)

    def tail_probability(self, x):
        """``P(X < x)`` for ``x <= u`` under the tail model: ``zeta * survival(u - x)``."""
        return self.zeta * self.survival(self.exceedances(x))

    def with_params(self, sigma, xi) -> "TailModel":
        return TailModel(self.threshold_u, float(sigma), float(xi), self.zeta, self.n_exceed,
                         math.nan, self.n_total)


# ---------------------------------------------------------------- closed forms

def gpd_survival(e, sigma, xi):
    e = np.asarray(e, dtype=float)
    if abs(xi) < XI_EXP_LIMIT:
        out = np.exp(-e / sigma)
    else:
        z = 1.0 + xi * e / sigma
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.where(z > 0, np.exp(-np.log(np.where(z > 0, z, 1.0)) / xi), 0.0)
    return out if out.ndim else float(out)


def _check_support(model, e):
    if np.any(e < 0):
        raise DomainError(f"x above the threshold u={model.threshold_u}")
    if model.shape_xi < 0 and np.any(e > model.upper_exceedance):
        raise DomainError(
            f"exceedance beyond the GPD endpoint {model.upper_exceedance:.6g} (shape {model.shape_xi:.4g})")


def gpd_cdf(model: TailModel, x):
    """Conditional tail CDF ``G = 1 - survival(u - x)`` for ``x <= u``."""
    e = model.exceedances(x)
    _check_support(model, e)
    out = 1.0 - np.asarray(model.survival(e))
    return out if np.ndim(out) else float(out)


def gpd_exceedance_quantile(g, sigma, xi):
    g = np.asarray(g, dtype=float)
    if np.any((g < 0) | (g > 1)):
        raise DomainError("GPD probability must lie in [0, 1]")
    with np.errstate(divide="ignore"):
        log_s = np.log1p(-g)
        if abs(xi) < XI_EXP_LIMIT:
            out = -sigma * log_s
        else:
            out = sigma / xi * np.expm1(-xi * log_s)
    return out if out.ndim else float(out)


def gpd_quantile(model: TailModel, g):
    """Inverse of :func:`gpd_cdf`: the power level with tail CDF ``g``."""
    out = model.threshold_u - np.asarray(gpd_exceedance_quantile(g, model.scale_sigma, model.shape_xi))
    return out if np.ndim(out) else float(out)


def gpd_loglik(e, sigma, xi):
    e = np.asarray(e, dtype=float)
    if not sigma > 0:
        return -math.inf
    a = e / sigma
    if abs(xi) < XI_EXP_LIMIT:
        return float(-e.size * math.log(sigma) - a.sum())
    z = 1.0 + xi * a
    if np.any(z <= 0):
        return -math.inf
    return float(-e.size * math.log(sigma) - (1.0 + 1.0 / xi) * np.log1p(xi * a).sum())


# --------------------------------------------------------- likelihood pieces

def _series_coeffs():
    j = np.arange(_SERIES_TERMS, dtype=float)
    c0 = (-1.0) ** j / (j + 1)
    c1 = np.array([(-1.0) ** k * k / (k + 1) for k in range(1, _SERIES_TERMS + 1)])
    c2 = np.array([(-1.0) ** k * k * (k - 1) / (k + 1) for k in range(2, _SERIES_TERMS + 2)])
    return c0, c1, c2


_C0, _C1, _C2 = _series_coeffs()


def _poly(coeffs, z):
    out = np.zeros_like(z)
    for c in coeffs[::-1]:
        out = out * z + c
    return out


def log1p_ratio(t, e, order=2):
    """``L = log1p(t*e)/t`` and its first two ``t``-derivatives.

    A power series replaces the closed forms where ``|t*e|`` is small so
    the ``t -> 0`` (exponential) limit is smooth.
    """
    t = np.asarray(t, dtype=float)
    e = np.asarray(e, dtype=float)
    z = t * e
    small = np.abs(z) < _SERIES_RADIUS

    def closed(tt, zz):
        l1p = np.log1p(zz)
        L = l1p / tt
        if order == 0:
            return L, None, None
        r = zz / (1.0 + zz)
        L1 = (r - l1p) / (tt * tt)
        L2 = (2.0 * l1p - 2.0 * r - r * r) / (tt * tt * tt)
        return L, L1, L2

    def series(zz, ee):
        L = ee * _poly(_C0, zz)
        if order == 0:
            return L, None, None
        return L, ee * ee * _poly(_C1, zz), ee ** 3 * _poly(_C2, zz)

    if small.all():
        return series(z, e)
    if not small.any():
        return closed(np.broadcast_to(t, z.shape), z)
    tb = np.broadcast_to(t, z.shape)
    eb = np.broadcast_to(e, z.shape)
    safe_t = np.where(small, 1.0, tb)
    safe_z = np.where(small, 0.0, z)
    with np.errstate(divide="ignore", invalid="ignore"):
        c = closed(safe_t, safe_z)
    s = series(np.where(small, z, 0.0), eb)
    if order == 0:
        return np.where(small, s[0], c[0]), None, None
    return tuple(np.where(small, sv, cv) for sv, cv in zip(s, c))


def _profile_terms(theta, E):
    """Per-row profile objective ``f = -log k - theta*k`` and derivatives.

    With ``z = theta*e`` and ``r = z/(1+z)`` the row means of ``L``, ``L'``
    and ``L''`` are ``sum(log1p z)/(m t)``, ``sum(r - log1p z)/(m t^2)`` and
    ``sum(2 log1p z - 2r - r^2)/(m t^3)``; the last two numerators cancel
    for small ``|z|`` and use their power series there.
    """
    m = E.shape[1]
    t = theta[:, None]
    z = t * E
    with np.errstate(divide="ignore", invalid="ignore"):
        l1p = np.log1p(z)
        r = z / (1.0 + z)
        d = r - l1p
        c = -2.0 * d - r * r
    small = np.abs(z) < _SERIES_RADIUS
    if small.any():
        zs = z[small]
        d[small] = zs * zs * _poly(_C1, zs)
        c[small] = zs * zs * zs * _poly(_C2, zs)
    with np.errstate(divide="ignore", invalid="ignore"):
        k = l1p.sum(axis=1) / (m * theta)
        k1 = d.sum(axis=1) / (m * theta ** 2)
        k2 = c.sum(axis=1) / (m * theta ** 3)
    zero = theta == 0
    if zero.any():
        # exponential limit
        Ez = E[zero]
        k[zero] = Ez.mean(axis=1)
        k1[zero] = -0.5 * (Ez * Ez).mean(axis=1)
        k2[zero] = (2.0 / 3.0) * (Ez ** 3).mean(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        f = -np.log(k) - theta * k
        g = -k1 / k - k - theta * k1
        h = -(k2 * k - k1 * k1) / (k * k) - 2.0 * k1 - theta * k2
    return f, g, h, k


def _admissible(theta, k, emax):
    xi = theta * k
    return (1.0 + theta * emax > 0) & (k > 0) & (xi > XI_BOUNDS[0]) & (xi <= XI_BOUNDS[1]) & np.isfinite(k)


def profile_newton(E, sigma0, xi0, max_iter=100, tol=1e-13):
    """Maximise the GPD likelihood for every row of ``E`` simultaneously.

    Works on the one-dimensional profile in ``theta = xi/sigma``; each row
    is iterated independently and frozen once converged, so a row's result
    does not depend on the other rows in the batch.

    Returns ``(sigma, xi, loglik, converged)`` arrays.
    """
    E = np.atleast_2d(np.asarray(E, dtype=float))
    R, m = E.shape
    emax = E.max(axis=1)
    scale = E.mean(axis=1)
    theta = np.broadcast_to(np.asarray(xi0, float) / np.asarray(sigma0, float), (R,)).copy()
    bad = ~(1.0 + theta * emax > 0)
    theta[bad] = -0.5 / emax[bad]
    f, g, h, k = _profile_terms(theta, E)
    ok = _admissible(theta, k, emax)
    if not ok.all():
        theta[~ok] = 0.0
        f[~ok], g[~ok], h[~ok], k[~ok] = (a[~ok] for a in _profile_terms(theta, E))
    active = np.ones(R, dtype=bool)
    converged = np.zeros(R, dtype=bool)
    for _ in range(max_iter):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        gi, hi = g[idx], h[idx]
        step = np.where(hi < 0, -gi / np.where(hi < 0, hi, -1.0), np.sign(gi) * 0.1 / scale[idx])
        # a negligible Newton step at a concave point needs no further evaluation
        tiny = (hi < 0) & (np.abs(step) * scale[idx] < tol)
        if tiny.any():
            converged[idx[tiny]] = True
            active[idx[tiny]] = False
            idx, step = idx[~tiny], step[~tiny]
            if idx.size == 0:
                break
        lam = np.ones(idx.size)
        pending = np.ones(idx.size, dtype=bool)
        for _ in range(60):
            sub = idx[pending]
            trial = theta[sub] + lam[pending] * step[pending]
            ft, gt, ht, kt = _profile_terms(trial, E[sub])
            good = _admissible(trial, kt, emax[sub]) & (ft >= f[sub] - 1e-15 * np.abs(f[sub]))
            acc = sub[good]
            moved = np.abs(trial[good] - theta[acc]) * scale[acc]
            theta[acc], f[acc], g[acc], h[acc], k[acc] = trial[good], ft[good], gt[good], ht[good], kt[good]
            done = moved < tol
            converged[acc[done]] = True
            active[acc[done]] = False
            pos = np.flatnonzero(pending)
            pending[pos[good]] = False
            lam[pending] *= 0.5
            if not pending.any():
                break
        stalled = idx[pending]
        # no ascent direction left: accept as converged when the gradient is negligible
        flat = np.abs(g[stalled]) / scale[stalled] < 1e-8
        converged[stalled[flat]] = True
        active[stalled] = False
    sigma = k
    xi = theta * k
    loglik = m * (f - 1.0)
    return sigma, xi, loglik, converged


def pwm_estimate(e):
    """Probability-weighted-moment estimates (Hosking & Wallis) for exceedances."""
    e = np.sort(np.asarray(e, dtype=float))
    n = e.size
    p = (np.arange(1, n + 1) - 0.35) / n
    a0 = e.mean()
    a1 = np.mean((1.0 - p) * e)
    denom = a0 - 2.0 * a1
    if not denom > 0:
        return a0, 0.0
    k = a0 / denom - 2.0
    sigma = 2.0 * a0 * a1 / denom
    xi = float(np.clip(-k, -0.9, 0.9))
    if not sigma > 0:
        sigma = a0
    return float(sigma), xi


def observed_information(e, sigma, xi):
    """Negative Hessian of the log-likelihood in ``(sigma, xi)``."""
    e = np.asarray(e, dtype=float)
    a = e / sigma
    w = sigma + xi * e
    h_ss = np.sum(1.0 / sigma ** 2 - (1.0 + xi) * e * (2.0 * sigma + xi * e) / (sigma * w) ** 2)
    h_sx = np.sum(e * (sigma - e) / (sigma * w ** 2))
    _, _, L2 = log1p_ratio(np.full(a.shape, xi), a)
    h_xx = np.sum(a * a / (1.0 + xi * a) ** 2 - L2)
    return -np.array([[h_ss, h_sx], [h_sx, h_xx]])


def score_and_hessian_terms(e, sigma, xi):
    """Per-observation gradient ``(n, 2)`` and Hessian ``(n, 2, 2)`` in ``(sigma, xi)``."""
    e = np.asarray(e, dtype=float)
    a = e / sigma
    w = sigma + xi * e
    g_s = -1.0 / sigma + (1.0 + xi) * e / (sigma * w)
    _, L1, L2 = log1p_ratio(np.full(a.shape, xi), a)
    g_x = -(a / (1.0 + xi * a) + L1)
    h_ss = 1.0 / sigma ** 2 - (1.0 + xi) * e * (2.0 * sigma + xi * e) / (sigma * w) ** 2
    h_sx = e * (sigma - e) / (sigma * w ** 2)
    h_xx = a * a / (1.0 + xi * a) ** 2 - L2
    grad = np.stack([g_s, g_x], axis=1)
    hess = np.stack([np.stack([h_ss, h_sx], axis=1), np.stack([h_sx, h_xx], axis=1)], axis=1)
    return grad, hess


@dataclass
class ExceedanceFit:
    sigma: float
    xi: float
    log_likelihood: float
    init: tuple
    init_log_likelihood: float
    covariance: np.ndarray | None


def fit_exceedances(e, warn=True) -> ExceedanceFit:
    """Maximum-likelihood GPD fit to nonnegative exceedances.

    Nelder-Mead on ``(log sigma, xi)`` from the PWM start, then a profile
    Newton polish; the polish is kept only when it does not lower the
    likelihood.
    """
    e = np.asarray(e, dtype=float)
    if e.size < 2 or np.ptp(e) == 0.0:
        raise FitError("GPD fit needs exceedances with nonzero spread")
    if np.any(e < 0):
        raise FitError("exceedances must be nonnegative")
    s0, x0 = pwm_estimate(e)
    ll0 = gpd_loglik(e, s0, x0)
    if not math.isfinite(ll0):
        # PWM start outside the support: pull the shape back inside it
        x0 = max(x0, -0.99 * s0 / e.max())
        ll0 = gpd_loglik(e, s0, x0)

    def nll(v):
        s, x = math.exp(v[0]), v[1]
        if not XI_BOUNDS[0] < x <= XI_BOUNDS[1]:
            return math.inf
        ll = gpd_loglik(e, s, x)
        return -ll if math.isfinite(ll) else math.inf

    res = minimize(nll, np.array([math.log(s0), x0]), method="Nelder-Mead",
                   options={"xatol": 1e-10, "fatol": 1e-12, "maxiter": 4000})
    if np.all(np.isfinite(res.x)) and math.isfinite(res.fun):
        s1, x1, ll1 = math.exp(res.x[0]), float(res.x[1]), -float(res.fun)
    else:
        s1, x1, ll1 = s0, x0, ll0
    sig, xi, ll, conv = profile_newton(e[None, :], s1, x1)
    if conv[0] and math.isfinite(ll[0]) and ll[0] >= ll1 - 1e-9 * abs(ll1):
        s1, x1 = float(sig[0]), float(xi[0])
        ll1 = gpd_loglik(e, s1, x1)
    elif not res.success:
        raise FitError(f"GPD likelihood optimisation did not converge: {res.message}")
    if not (math.isfinite(ll1) and s1 > 0):
        raise FitError("GPD fit produced an invalid optimum")
    if np.any(1.0 + x1 * e / s1 <= 0):
        raise FitError("GPD optimum violates the support constraint")
    if warn and x1 <= XI_WARN:
        warnings.warn(f"GPD shape {x1:.3f} <= {XI_WARN}: maximum likelihood is irregular here",
                      GpdShapeWarning, stacklevel=2)
    try:
        cov = np.linalg.inv(observed_information(e, s1, x1))
        if not np.all(np.isfinite(cov)) or np.any(np.diag(cov) <= 0):
            cov = None
    except np.linalg.LinAlgError:
        cov = None
    return ExceedanceFit(s1, x1, ll1, (s0, x0), ll0, cov)


def tail_exceedances(seq, u):
    x = seq.values if isinstance(seq, IidSequence) else np.asarray(seq, dtype=float)
    return u - x[x < u]


def fit_gpd(seq, u, warn=True) -> TailModel:
    """Fit the lower tail of ``seq`` below threshold ``u``."""
    x = seq.values if isinstance(seq, IidSequence) else np.asarray(seq, dtype=float)
    e = u - x[x < u]
    if e.size < MIN_EXCEEDANCES:
        raise FitError(f"only {e.size} exceedances below u={u:.6g}; need {MIN_EXCEEDANCES}")
    fit = fit_exceedances(e, warn=warn)
    return TailModel(float(u), fit.sigma, fit.xi, e.size / x.size, int(e.size),
                     fit.log_likelihood, int(x.size), fit.covariance)


# --------------------------------------------------------------- diagnostics

@dataclass
class ThresholdDiagnostics:
    candidate_thresholds: np.ndarray
    mrl_curve: list = field(default_factory=list)          # (u, mean excess, CI halfwidth, count)
    stability_curves: list = field(default_factory=list)   # (u, xi, modified scale, xi halfwidth, scale halfwidth)
    suggested_u: float | None = None
    mrl_suggested_u: float | None = None
    stability_suggested_u: float | None = None


def threshold_grid(seq, q_low=0.005, q_high=0.2, count=40):
    x = seq.values if isinstance(seq, IidSequence) else np.asarray(seq, dtype=float)
    return np.unique(np.quantile(x, np.linspace(q_low, q_high, count)))


def _grid(seq, grid):
    if grid is None:
        return threshold_grid(seq)
    if isinstance(grid, dict):
        return threshold_grid(seq, **grid)
    return np.sort(np.atleast_1d(np.asarray(grid, dtype=float)))


def _linear_enough(u, m, hw, r2_min):
    if u.size < 3:
        return True
    coef = np.polyfit(u, m, 1)
    resid = m - np.polyval(coef, u)
    ss_tot = float(np.sum((m - m.mean()) ** 2))
    r2 = 1.0 - float(resid @ resid) / ss_tot if ss_tot > 0 else 1.0
    return r2 >= r2_min or float(np.max(np.abs(resid))) <= float(np.mean(hw))


def mrl_diagnostic(seq, grid=None, r2_min=0.99, z=1.959963984540054) -> ThresholdDiagnostics:
    """Mean excess ``E[u - X | X < u]`` over candidate thresholds.

    The suggested threshold is the highest candidate whose mean-excess
    curve over all lower candidates is linear: a straight-line fit reaches
    ``R^2 >= r2_min`` or stays within the average confidence half-width.
    """
    x = seq.values if isinstance(seq, IidSequence) else np.asarray(seq, dtype=float)
    cands = _grid(seq, grid)
    rows = []
    dropped = 0
    for u in cands:
        e = u - x[x < u]
        if e.size < MIN_EXCEEDANCES:
            dropped += 1
            continue
        rows.append((float(u), float(e.mean()), float(z * e.std(ddof=1) / math.sqrt(e.size)), int(e.size)))
    if dropped:
        warnings.warn(f"{dropped} threshold candidates dropped: fewer than {MIN_EXCEEDANCES} exceedances",
                      DiagnosticsWarning, stacklevel=2)
    diag = ThresholdDiagnostics(cands, mrl_curve=rows)
    if rows:
        arr = np.array(rows)
        for i in range(len(rows) - 1, -1, -1):
            if _linear_enough(arr[: i + 1, 0], arr[: i + 1, 1], arr[: i + 1, 2], r2_min):
                diag.mrl_suggested_u = float(arr[i, 0])
                break
    diag.suggested_u = diag.mrl_suggested_u
    return diag


def stability_diagnostic(seq, grid=None, z=1.959963984540054) -> ThresholdDiagnostics:
    """Shape and modified scale against the threshold.

    In the lower-tail orientation a GPD tail keeps ``sigma(u) + xi*u``
    constant, so that is the modified scale reported here. The suggested
    threshold is the highest candidate whose shape and modified scale
    agree with every lower candidate within that candidate's band.
    """
    x = seq.values if isinstance(seq, IidSequence) else np.asarray(seq, dtype=float)
    cands = _grid(seq, grid)
    rows = []
    dropped = 0
    for u in cands:
        e = u - x[x < u]
        if e.size < MIN_EXCEEDANCES:
            dropped += 1
            continue
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", GpdShapeWarning)
                fit = fit_exceedances(e)
        except FitError:
            dropped += 1
            continue
        if fit.covariance is not None:
            var_s, var_x, cov_sx = fit.covariance[0, 0], fit.covariance[1, 1], fit.covariance[0, 1]
            hw_x = z * math.sqrt(var_x)
            hw_s = z * math.sqrt(max(var_s + 2 * u * cov_sx + u * u * var_x, 0.0))
        else:
            hw_x = hw_s = math.inf
        rows.append((float(u), fit.xi, fit.sigma + fit.xi * u, hw_x, hw_s))
    if dropped:
        warnings.warn(f"{dropped} threshold candidates dropped from the stability diagnostic",
                      DiagnosticsWarning, stacklevel=2)
    diag = ThresholdDiagnostics(cands, stability_curves=rows)
    if rows:
        arr = np.array(rows)
        for i in range(len(rows) - 1, -1, -1):
            lower = arr[:i]
            if np.all(np.abs(lower[:, 1] - arr[i, 1]) <= lower[:, 3]) and \
                    np.all(np.abs(lower[:, 2] - arr[i, 2]) <= lower[:, 4]):
                diag.stability_suggested_u = float(arr[i, 0])
                break
    diag.suggested_u = diag.stability_suggested_u
    return diag


def threshold_diagnostics(seq, grid=None, r2_min=0.99) -> ThresholdDiagnostics:
    """Both diagnostics on one grid; the suggestion is the lower of the two."""
    mrl = mrl_diagnostic(seq, grid, r2_min)
    stab = stability_diagnostic(seq, grid)
    picks = [v for v in (mrl.mrl_suggested_u, stab.stability_suggested_u) if v is not None]
    return ThresholdDiagnostics(mrl.candidate_thresholds, mrl.mrl_curve, stab.stability_curves,
                                min(picks) if picks else None, mrl.mrl_suggested_u,
                                stab.stability_suggested_u)


@dataclass
class FitDiagnostics:
    pp_points: np.ndarray   # (empirical CDF, model CDF)
    qq_points: np.ndarray   # (empirical exceedance quantile, model quantile)
    max_pp_deviation: float
    bound: float = 0.05

    @property
    def passed(self) -> bool:
        return self.max_pp_deviation <= self.bound


def validate_fit(model: TailModel, seq, bound=0.05) -> FitDiagnostics:
    """PP and QQ points of the tail exceedances against the fitted GPD."""
    e = np.sort(tail_exceedances(seq, model.threshold_u))
    m = e.size
    if m == 0:
        return FitDiagnostics(np.empty((0, 2)), np.empty((0, 2)), 0.0, bound)
    emp = np.arange(1, m + 1) / (m + 1.0)
    mod = 1.0 - np.asarray(gpd_survival(e, model.scale_sigma, model.shape_xi), dtype=float)
    q_mod = np.asarray(gpd_exceedance_quantile(emp, model.scale_sigma, model.shape_xi), dtype=float)
    pp = np.column_stack([emp, mod])
    qq = np.column_stack([e, q_mod])
    return FitDiagnostics(pp, qq, float(np.max(np.abs(emp - mod))), bound)
