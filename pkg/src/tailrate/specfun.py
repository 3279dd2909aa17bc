"""Special functions used by the rate-selection chain.

Everything here is self-contained numpy: log-gamma, digamma/trigamma,
the regularized incomplete beta function and its Newton-Raphson inverse,
the standard normal CDF and quantile, and maximum-likelihood fitting of
the Beta distribution.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, FitError, NumericalError

_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)
_SQRT2 = math.sqrt(2.0)

CF_TOL = 1e-15
_ONE_MINUS = 1.0 - 2.0 ** -53
CF_MAX_TERMS = 300
MAX_CONCENTRATION = 1e10


@dataclass(frozen=True)
class BetaParams:
    """Shape parameters of a Beta distribution on [0, 1]."""

    p: float
    q: float

    def __post_init__(self):
        object.__setattr__(self, "p", float(self.p))
        object.__setattr__(self, "q", float(self.q))
        if not (self.p > 0 and self.q > 0 and math.isfinite(self.p) and math.isfinite(self.q)):
            raise DomainError(f"Beta shapes must be positive and finite, got p={self.p}, q={self.q}")

    @property
    def mean(self) -> float:
        return self.p / (self.p + self.q)

    def cdf(self, x):
        return beta_cdf(x, self)

    def ppf(self, u):
        return beta_inv_cdf(u, self)


# ---------------------------------------------------------------- gamma family

def log_gamma(x):
    """Natural log of the gamma function for positive arguments.

    Arguments below 15 are shifted up by recurrence before applying the
    Stirling series, which keeps absolute error near 1e-15.
    """
    x = np.asarray(x, dtype=float)
    if np.any(~(x > 0)):
        raise DomainError("log_gamma requires positive arguments")
    z = x.copy()
    shift = np.zeros_like(z)
    small = z < 15.0
    while np.any(small):
        shift[small] += np.log(z[small])
        z[small] += 1.0
        small = z < 15.0
    zi = 1.0 / z
    zi2 = zi * zi
    series = zi * (1.0 / 12 - zi2 * (1.0 / 360 - zi2 * (1.0 / 1260 - zi2 * (1.0 / 1680 - zi2 / 1188))))
    out = (z - 0.5) * np.log(z) - z + _HALF_LOG_2PI + series - shift
    return out if out.ndim else float(out)


def _log_gamma_scalar(x):
    shift = 0.0
    while x < 15.0:
        shift += math.log(x)
        x += 1.0
    zi = 1.0 / x
    zi2 = zi * zi
    series = zi * (1.0 / 12 - zi2 * (1.0 / 360 - zi2 * (1.0 / 1260 - zi2 * (1.0 / 1680 - zi2 / 1188))))
    return (x - 0.5) * math.log(x) - x + _HALF_LOG_2PI + series - shift


def log_beta(p, q):
    if np.ndim(p) == 0 and np.ndim(q) == 0:
        if not (p > 0 and q > 0):
            raise DomainError("log_beta requires positive arguments")
        return _log_gamma_scalar(float(p)) + _log_gamma_scalar(float(q)) - _log_gamma_scalar(float(p) + float(q))
    return log_gamma(p) + log_gamma(q) - log_gamma(np.asarray(p, float) + q)


def digamma(x):
    x = np.asarray(x, dtype=float)
    if np.any(~(x > 0)):
        raise DomainError("digamma requires positive arguments")
    z = x.copy()
    acc = np.zeros_like(z)
    small = z < 10.0
    while np.any(small):
        acc[small] -= 1.0 / z[small]
        z[small] += 1.0
        small = z < 10.0
    zi2 = 1.0 / (z * z)
    series = zi2 * (1.0 / 12 - zi2 * (1.0 / 120 - zi2 * (1.0 / 252 - zi2 * (1.0 / 240 - zi2 / 132))))
    out = np.log(z) - 0.5 / z - series + acc
    return out if out.ndim else float(out)


def trigamma(x):
    x = np.asarray(x, dtype=float)
    if np.any(~(x > 0)):
        raise DomainError("trigamma requires positive arguments")
    z = x.copy()
    acc = np.zeros_like(z)
    small = z < 10.0
    while np.any(small):
        acc[small] += 1.0 / (z[small] * z[small])
        z[small] += 1.0
        small = z < 10.0
    zi = 1.0 / z
    zi2 = zi * zi
    series = zi + 0.5 * zi2 + zi * zi2 * (1.0 / 6 - zi2 * (1.0 / 30 - zi2 * (1.0 / 42 - zi2 * (1.0 / 30 - zi2 * 5.0 / 66))))
    out = series + acc
    return out if out.ndim else float(out)


# ----------------------------------------------------------- incomplete beta

def _betacf(x, a, b):
    """Continued fraction for I_x(a, b) by the modified Lentz method."""
    tiny = 1e-300
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = np.ones_like(x)
    d = 1.0 - qab * x / qap
    d = np.where(np.abs(d) < tiny, tiny, d)
    d = 1.0 / d
    h = d.copy()
    active = np.ones(x.shape, dtype=bool)
    for m in range(1, CF_MAX_TERMS + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d_new = 1.0 + aa * d
        d_new = np.where(np.abs(d_new) < tiny, tiny, d_new)
        c_new = 1.0 + aa / c
        c_new = np.where(np.abs(c_new) < tiny, tiny, c_new)
        d_new = 1.0 / d_new
        h_new = h * d_new * c_new
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d_new = 1.0 + aa * d_new
        d_new = np.where(np.abs(d_new) < tiny, tiny, d_new)
        c_new = 1.0 + aa / c_new
        c_new = np.where(np.abs(c_new) < tiny, tiny, c_new)
        d_new = 1.0 / d_new
        delta = d_new * c_new
        h_new = h_new * delta
        h = np.where(active, h_new, h)
        d = np.where(active, d_new, d)
        c = np.where(active, c_new, c)
        active &= np.abs(delta - 1.0) > CF_TOL
        if not active.any():
            return h
    raise NumericalError(f"incomplete beta continued fraction did not converge in {CF_MAX_TERMS} terms")


def _betacf_scalar(x, a, b):
    tiny = 1e-300
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, CF_MAX_TERMS + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) <= CF_TOL:
            return h
    raise NumericalError(f"incomplete beta continued fraction did not converge in {CF_MAX_TERMS} terms")


def _log_betainc_lower(x, p, q, lbeta):
    # log I_x(p, q) without the symmetry switch; valid for x <= (p+1)/(p+q+2)
    return p * math.log(x) + q * math.log1p(-x) - lbeta - math.log(p) + math.log(_betacf_scalar(x, p, q))


def _betainc_scalar(x, p, q, lbeta):
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    if x <= (p + 1.0) / (p + q + 2.0):
        return math.exp(_log_betainc_lower(x, p, q, lbeta))
    return 1.0 - math.exp(_log_betainc_lower(1.0 - x, q, p, lbeta))


def _as_params(params, q=None):
    if isinstance(params, BetaParams):
        return params.p, params.q
    if q is None:
        p, q = params
        return float(p), float(q)
    return float(params), float(q)


def beta_cdf(x, params, q=None):
    """Regularized incomplete beta function ``I_x(p, q)``.

    ``params`` is a :class:`BetaParams` or the shape ``p`` with ``q`` given
    separately. Accepts scalars or arrays in [0, 1].
    """
    p, q = _as_params(params, q)
    if np.ndim(x) == 0:
        x = float(x)
        if not 0.0 <= x <= 1.0:
            raise DomainError("beta_cdf requires 0 <= x <= 1")
        return min(max(_betainc_scalar(x, p, q, log_beta(p, q)), 0.0), 1.0)
    x = np.asarray(x, dtype=float)
    if np.any(~((x >= 0.0) & (x <= 1.0))):
        raise DomainError("beta_cdf requires 0 <= x <= 1")
    out = np.empty(x.shape)
    out[x == 0.0] = 0.0
    out[x == 1.0] = 1.0
    inner = (x > 0.0) & (x < 1.0)
    if inner.any():
        xi = x[inner]
        lbeta = log_beta(p, q)
        flip = xi > (p + 1.0) / (p + q + 2.0)
        res = np.empty(xi.shape)
        if (~flip).any():
            xs = xi[~flip]
            front = np.exp(p * np.log(xs) + q * np.log1p(-xs) - lbeta) / p
            res[~flip] = front * _betacf(xs, p, q)
        if flip.any():
            xs = 1.0 - xi[flip]
            front = np.exp(q * np.log(xs) + p * np.log1p(-xs) - lbeta) / q
            res[flip] = 1.0 - front * _betacf(xs, q, p)
        out[inner] = np.clip(res, 0.0, 1.0)
    return out if out.ndim else float(out)


def beta_pdf(x, params, q=None):
    p, q = _as_params(params, q)
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.exp((p - 1.0) * np.log(x) + (q - 1.0) * np.log1p(-x) - log_beta(p, q))
    return out if out.ndim else float(out)


def _initial_guess(u, p, q, lbeta):
    # Mean as the default; power-law tail approximations when u sits in a tail.
    mean = p / (p + q)
    lo = math.exp((math.log(u) + math.log(p) + lbeta) / p) if u > 0 else 0.0
    hi = 1.0 - math.exp((math.log1p(-u) + math.log(q) + lbeta) / q) if u < 1 else 1.0
    if 0.0 < lo < mean:
        return lo
    if mean < hi < 1.0:
        return hi
    return mean


def _beta_inv_scalar(u, p, q, max_iter):
    # solves I_x(p, q) = u for u <= 0.5 by Newton on log I_x, bracketed
    if u <= 0.0:
        return 0.0
    lbeta = log_beta(p, q)
    log_u = math.log(u)
    split = (p + 1.0) / (p + q + 2.0)
    lo, hi = 0.0, 1.0
    x = min(max(_initial_guess(u, p, q, lbeta), 1e-300), _ONE_MINUS)
    for _ in range(max_iter):
        if x <= split:
            log_f = _log_betainc_lower(x, p, q, lbeta)
        else:
            f_val = _betainc_scalar(x, p, q, lbeta)
            log_f = math.log(f_val) if f_val > 0 else -math.inf
        g = log_f - log_u
        if g == 0.0:
            return x
        if g < 0.0:
            lo = x
        else:
            hi = x
        # d(log I)/dx = density / I
        log_dens = (p - 1.0) * math.log(x) + (q - 1.0) * math.log1p(-x) - lbeta
        step = g * math.exp(min(log_f - log_dens, 700.0))
        x_new = x - step
        if not (lo < x_new < hi) or not math.isfinite(x_new):
            if lo > 0.0 and hi / lo > 1e3:
                x_new = math.sqrt(lo * hi)
            elif lo == 0.0 and hi < 1e-3:
                x_new = hi * 1e-3
            else:
                x_new = 0.5 * (lo + hi)
        x_new = min(max(x_new, 5e-324), _ONE_MINUS)
        if abs(x_new - x) <= 4e-16 * x or hi - lo <= 4e-16 * hi:
            return x_new
        x = x_new
    if abs(_betainc_scalar(x, p, q, lbeta) - u) <= 1e-10:
        return x
    raise NumericalError(f"beta_inv_cdf did not converge for u={u}, p={p}, q={q}")


def beta_inv_cdf(u, params, q=None, max_iter=200):
    """Inverse of :func:`beta_cdf` in ``x``.

    Newton-Raphson with the Beta density as derivative, safeguarded by a
    bracket that falls back to bisection whenever a step leaves it. Upper
    quantiles are solved on the reflected distribution.
    """
    p, q = _as_params(params, q)
    u_arr = np.asarray(u, dtype=float)
    if np.any(~((u_arr >= 0.0) & (u_arr <= 1.0))):
        raise DomainError("beta_inv_cdf requires 0 <= u <= 1")
    flat = [
        _beta_inv_scalar(v, p, q, max_iter) if v <= 0.5 else 1.0 - _beta_inv_scalar(1.0 - v, q, p, max_iter)
        for v in map(float, u_arr.ravel())
    ]
    out = np.array(flat).reshape(u_arr.shape)
    return out if out.ndim else float(out)


# --------------------------------------------------------------- normal

_erfc = np.frompyfunc(math.erfc, 1, 1)

# Acklam's rational approximation to the normal quantile
_A = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
      1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
_B = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
      6.680131188771972e01, -1.328068155288572e01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
      -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
      3.754408661907416e00)
_P_LOW = 0.02425


def norm_cdf(z):
    z = np.asarray(z, dtype=float)
    out = 0.5 * np.asarray(_erfc(-z / _SQRT2), dtype=float)
    return out if out.ndim else float(out)


def _norm_inv_scalar(u):
    if u < 0.5:
        return -_norm_inv_lower(u)
    return _norm_inv_lower(1.0 - u) if u > 0.5 else 0.0


def _norm_inv_lower(u):
    # returns Phi^{-1}(1-u) > 0 for u <= 0.5, computed from the lower tail
    if u < _P_LOW:
        t = math.sqrt(-2.0 * math.log(u))
        x = (((((_C[0] * t + _C[1]) * t + _C[2]) * t + _C[3]) * t + _C[4]) * t + _C[5]) / \
            ((((_D[0] * t + _D[1]) * t + _D[2]) * t + _D[3]) * t + 1.0)
    else:
        t = u - 0.5
        r = t * t
        x = (((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * t / \
            (((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0)
    # x approximates Phi^{-1}(u) (negative); one Halley step on the lower tail
    e = 0.5 * math.erfc(-x / _SQRT2) - u
    step = e * math.sqrt(2.0 * math.pi) * math.exp(0.5 * x * x)
    x = x - step / (1.0 + 0.5 * x * step)
    return -x


def norm_inv_cdf(u):
    """Standard normal quantile; rational approximation plus one Halley step."""
    u_arr = np.asarray(u, dtype=float)
    if np.any(~((u_arr > 0.0) & (u_arr < 1.0))):
        raise DomainError("norm_inv_cdf requires 0 < u < 1")
    out = np.array([_norm_inv_scalar(float(v)) for v in u_arr.ravel()]).reshape(u_arr.shape)
    return out if out.ndim else float(out)


# ---------------------------------------------------------- beta fitting

def clamp_unit_interval(samples, eps=None):
    """Clamp values to ``[eps, 1 - eps]`` with ``eps = 1/(2n)`` by default.

    Returns the clamped array, the number of values moved and ``eps``.
    """
    w = np.asarray(samples, dtype=float)
    if eps is None:
        eps = 1.0 / (2.0 * max(w.size, 1))
    clamped = np.clip(w, eps, 1.0 - eps)
    return clamped, int(np.count_nonzero(clamped != w)), eps


def beta_moments_fit(samples) -> BetaParams:
    w = np.asarray(samples, dtype=float)
    m = w.mean()
    v = w.var()
    if not v > 0:
        raise FitError("Beta fit needs samples with nonzero variance")
    common = m * (1.0 - m) / v - 1.0
    if not common > 0:
        raise FitError("method-of-moments Beta fit is infeasible (variance too large)")
    return BetaParams(m * common, (1.0 - m) * common)


def beta_fit(samples, symmetric=False, max_iter=100) -> BetaParams:
    """Maximum-likelihood Beta fit.

    Newton iteration on the digamma score equations, started from the
    method-of-moments solution; falls back to that solution when Newton
    fails. ``symmetric=True`` constrains ``p == q``.
    """
    w = np.asarray(samples, dtype=float)
    if w.size < 10:
        raise FitError(f"Beta fit needs at least 10 samples, got {w.size}")
    if np.any(~((w > 0.0) & (w < 1.0))):
        raise DomainError("Beta fit samples must lie strictly inside (0, 1); clamp endpoints first")
    if np.ptp(w) == 0.0:
        raise FitError("Beta fit samples are all equal")
    s1 = float(np.mean(np.log(w)))
    s2 = float(np.mean(np.log1p(-w)))
    try:
        start = beta_moments_fit(w)
    except FitError:
        start = BetaParams(0.5, 0.5)
    if symmetric:
        return _concentration_check(_beta_fit_symmetric(0.5 * (s1 + s2), 0.5 * (start.p + start.q), max_iter))
    return _concentration_check(_beta_fit_pq(s1, s2, start, max_iter))


def _concentration_check(b: BetaParams) -> BetaParams:
    # p + q this large means the sample is a point mass up to rounding
    if not b.p + b.q <= MAX_CONCENTRATION:
        raise FitError(f"Beta fit is degenerate: p + q = {b.p + b.q:.3g} (samples nearly constant)")
    return b


def _beta_fit_pq(s1, s2, start, max_iter):
    p, q = start.p, start.q
    for _ in range(max_iter):
        dpq = float(digamma(p + q))
        g1 = float(digamma(p)) - dpq - s1
        g2 = float(digamma(q)) - dpq - s2
        tpq = float(trigamma(p + q))
        j11 = float(trigamma(p)) - tpq
        j22 = float(trigamma(q)) - tpq
        det = j11 * j22 - tpq * tpq
        if not (det > 0 and math.isfinite(det)):
            return start
        dp = (j22 * g1 + tpq * g2) / det
        dq = (tpq * g1 + j11 * g2) / det
        lam = 1.0
        while p - lam * dp <= 0 or q - lam * dq <= 0:
            lam *= 0.5
            if lam < 1e-10:
                return start
        p, q = p - lam * dp, q - lam * dq
        if abs(dp) <= 1e-13 * p and abs(dq) <= 1e-13 * q:
            return BetaParams(p, q)
    return start


def _beta_fit_symmetric(s, p0, max_iter):
    p = p0
    for _ in range(max_iter):
        g = float(digamma(p)) - float(digamma(2 * p)) - s
        dg = float(trigamma(p)) - 2.0 * float(trigamma(2 * p))
        step = g / dg
        while p - step <= 0:
            step *= 0.5
        p -= step
        if abs(step) <= 1e-13 * p:
            return BetaParams(p, p)
    raise FitError("symmetric Beta fit did not converge")
