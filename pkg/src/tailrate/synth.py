"""Synthetic two-receiver power traces with known margins and dependence.

Dependence is applied to uniforms first (lower-tail uniforms: small
values are deep fades) and margins are then obtained by inversion, so
every generated channel has an analytically known CDF.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import integrate, special

from .errors import ArgumentError, NumericalError
from .trace import PowerTrace, Unit

BLOCK = 1 << 18
MARGIN_FAMILIES = ("gpd_gauss", "gaussian", "lognormal")
DEPENDENCE_KINDS = ("independent", "gaussian", "logistic")


@dataclass(frozen=True)
class MarginSpec:
    """One channel's marginal law in linear mW.

    ``gpd_gauss`` is a Gaussian bulk ``N(mu, s)`` whose lower tail below its
    ``zeta`` quantile ``u`` is replaced by a GPD(``sigma``, ``xi``) with the
    CDF continuous at ``u``. ``lognormal`` uses ``mu``, ``s`` on the log scale.
    """

    family: str = "gpd_gauss"
    mu: float = 1.0
    s: float = 0.15
    zeta: float = 0.05
    sigma: float = 0.15
    xi: float = -0.2

    def __post_init__(self):
        if self.family not in MARGIN_FAMILIES:
            raise ArgumentError(f"unknown margin family {self.family!r}; choose from {MARGIN_FAMILIES}")
        if not self.s > 0:
            raise ArgumentError("margin spread s must be positive")
        if self.family == "gpd_gauss":
            if not 0.0 < self.zeta < 1.0:
                raise ArgumentError("zeta must lie in (0, 1)")
            if not self.sigma > 0:
                raise ArgumentError("GPD scale must be positive")

    @property
    def threshold(self) -> float:
        """Splice point ``u`` of the GPD tail (``gpd_gauss`` only)."""
        return self.mu + self.s * float(special.ndtri(self.zeta))

    def ppf(self, uniform):
        """Inverse CDF applied to lower-tail uniforms."""
        u = np.asarray(uniform, dtype=float)
        if self.family == "gaussian":
            return self.mu + self.s * special.ndtri(u)
        if self.family == "lognormal":
            return np.exp(self.mu + self.s * special.ndtri(u))
        out = self.mu + self.s * special.ndtri(np.maximum(u, self.zeta))
        tail = u < self.zeta
        ratio = u[tail] / self.zeta
        if abs(self.xi) < 1e-12:
            e = -self.sigma * np.log(ratio)
        else:
            e = self.sigma / self.xi * np.expm1(-self.xi * np.log(ratio))
        out[tail] = self.threshold - e
        return out

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        if self.family == "gaussian":
            out = special.ndtr((x - self.mu) / self.s)
        elif self.family == "lognormal":
            with np.errstate(divide="ignore", invalid="ignore"):
                out = np.where(x > 0, special.ndtr((np.log(np.where(x > 0, x, 1.0)) - self.mu) / self.s), 0.0)
        else:
            u = self.threshold
            e = np.maximum(u - x, 0.0)
            if abs(self.xi) < 1e-12:
                surv = np.exp(-e / self.sigma)
            else:
                z = 1.0 + self.xi * e / self.sigma
                with np.errstate(divide="ignore", invalid="ignore"):
                    surv = np.where(z > 0, np.exp(-np.log(np.where(z > 0, z, 1.0)) / self.xi), 0.0)
            out = np.where(x < u, self.zeta * surv, special.ndtr((x - self.mu) / self.s))
        return out if out.ndim else float(out)


@dataclass(frozen=True)
class DependenceSpec:
    """Copula of the lower-tail uniforms.

    ``param`` is the correlation for ``gaussian`` and the logistic
    dependence parameter ``theta`` in (0, 1] for ``logistic`` (1 means
    independence).
    """

    kind: str = "logistic"
    param: float = 0.8

    def __post_init__(self):
        if self.kind not in DEPENDENCE_KINDS:
            raise ArgumentError(f"unknown dependence {self.kind!r}; choose from {DEPENDENCE_KINDS}")
        if self.kind == "gaussian" and not -1.0 < self.param < 1.0:
            raise ArgumentError("Gaussian copula correlation must lie in (-1, 1)")
        if self.kind == "logistic" and not 0.0 < self.param <= 1.0:
            raise ArgumentError("logistic theta must lie in (0, 1]")


@dataclass(frozen=True)
class SynthSpec:
    margin_x: MarginSpec = field(default_factory=MarginSpec)
    margin_y: MarginSpec = field(default_factory=MarginSpec)
    dependence: DependenceSpec = field(default_factory=DependenceSpec)
    n_total: int = 100_000
    seed: int = 0

    def __post_init__(self):
        if int(self.n_total) < 1:
            raise ArgumentError("n_total must be positive")
        if int(self.seed) < 0:
            raise ArgumentError("seed must be nonnegative")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SynthSpec":
        try:
            return cls(MarginSpec(**d.get("margin_x", {})), MarginSpec(**d.get("margin_y", {})),
                       DependenceSpec(**d.get("dependence", {})), int(d.get("n_total", 100_000)),
                       int(d.get("seed", 0)))
        except TypeError as exc:
            raise ArgumentError(f"invalid synthetic spec: {exc}") from None

    def replace(self, **changes) -> "SynthSpec":
        d = self.to_dict()
        d.update(changes)
        if isinstance(d["margin_x"], MarginSpec):
            d["margin_x"] = asdict(d["margin_x"])
        if isinstance(d["margin_y"], MarginSpec):
            d["margin_y"] = asdict(d["margin_y"])
        if isinstance(d["dependence"], DependenceSpec):
            d["dependence"] = asdict(d["dependence"])
        return SynthSpec.from_dict(d)


def _positive_stable(rng, alpha, size):
    """Positive stable variates with Laplace transform ``exp(-t**alpha)`` (Kanter)."""
    if alpha == 1.0:
        return np.ones(size)
    u = rng.uniform(0.0, math.pi, size)
    w = rng.exponential(1.0, size)
    return (np.sin(alpha * u) / np.sin(u) ** (1.0 / alpha)
            * (np.sin((1.0 - alpha) * u) / w) ** ((1.0 - alpha) / alpha))


def _uniform_block(dep: DependenceSpec, rng, m):
    if dep.kind == "independent":
        return rng.random(m), rng.random(m)
    if dep.kind == "gaussian":
        z1 = rng.standard_normal(m)
        z2 = dep.param * z1 + math.sqrt(1.0 - dep.param ** 2) * rng.standard_normal(m)
        return special.ndtr(z1), special.ndtr(z2)
    alpha = dep.param
    s = _positive_stable(rng, alpha, m)
    e1 = rng.exponential(1.0, m)
    e2 = rng.exponential(1.0, m)
    # unit Frechet pair with logistic dependence; -expm1(-1/Z) is its survival uniform
    z1 = (s / e1) ** alpha
    z2 = (s / e2) ** alpha
    return -np.expm1(-1.0 / z1), -np.expm1(-1.0 / z2)


def generate_uniforms(spec: SynthSpec):
    """Copula uniforms in blocks of ``BLOCK`` with per-block seeds.

    Every block draws its full size and is truncated, so a longer trace
    extends a shorter one with the same seed.
    """
    n = int(spec.n_total)
    ux = np.empty(n)
    uy = np.empty(n)
    for b, start in enumerate(range(0, n, BLOCK)):
        m = min(BLOCK, n - start)
        rng = np.random.default_rng([int(spec.seed), b])
        a, c = _uniform_block(spec.dependence, rng, BLOCK)
        ux[start:start + m] = a[:m]
        uy[start:start + m] = c[:m]
    return ux, uy


def generate(spec: SynthSpec):
    """Two :class:`PowerTrace` objects (``rx1``, ``rx2``) in linear mW."""
    ux, uy = generate_uniforms(spec)
    ts = np.arange(int(spec.n_total), dtype=float)
    return (PowerTrace("rx1", spec.margin_x.ppf(ux), Unit.MW, ts),
            PowerTrace("rx2", spec.margin_y.ppf(uy), Unit.MW, ts))


def copula_lower(dep: DependenceSpec, a: float, b: float) -> float:
    """``P(U1 < a, U2 < b)`` for the lower-tail uniforms."""
    a = min(max(float(a), 0.0), 1.0)
    b = min(max(float(b), 0.0), 1.0)
    if a == 0.0 or b == 0.0:
        return 0.0
    if a == 1.0:
        return b
    if b == 1.0:
        return a
    if dep.kind == "independent":
        return a * b
    if dep.kind == "logistic":
        t = dep.param
        v = ((-math.log1p(-a)) ** (1.0 / t) + (-math.log1p(-b)) ** (1.0 / t)) ** t
        return a + b + math.expm1(-v)
    rho = dep.param
    za = float(special.ndtri(a))
    zb = float(special.ndtri(b))
    c = math.sqrt(1.0 - rho * rho)
    # integrate over the smaller margin so the integrand carries the mass
    if a > b:
        za, zb = zb, za
    val, err = integrate.quad(lambda z: math.exp(-0.5 * z * z) / math.sqrt(2 * math.pi)
                              * float(special.ndtr((zb - rho * z) / c)),
                              -np.inf, za, epsabs=0.0, epsrel=1e-11, limit=200)
    if not math.isfinite(val) or err > 1e-8 * max(val, 1e-300) + 1e-300:
        raise NumericalError(f"copula quadrature did not converge (estimate {val}, error {err})")
    return val


def true_joint_tail_prob(spec: SynthSpec, x: float, y: float) -> float:
    """``P(X < x, Y < y)`` under the generating law."""
    return copula_lower(spec.dependence, spec.margin_x.cdf(x), spec.margin_y.cdf(y))


def example_spec(n_total=100_000, seed=0, theta=0.8) -> SynthSpec:
    """Both channels GPD-tailed around 1 mW with logistic lower-tail dependence."""
    return SynthSpec(MarginSpec(), MarginSpec(), DependenceSpec("logistic", theta), n_total, seed)
