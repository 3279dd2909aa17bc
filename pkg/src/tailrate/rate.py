"""Rate selection from the joint tail model and outage assessment on held-out data."""
from __future__ import annotations

import math
import sys
from dataclasses import asdict, dataclass

import numpy as np

from .bivariate import BgpdModel, JointTailSample, angular_components, frechet_transform
from .errors import ArgumentError, DataError, DomainError, NumericalError
from .specfun import BetaParams, beta_cdf, beta_inv_cdf
from .tail_fit import TailModel
from .trace import IidSequence

TINY = sys.float_info.min
ROUNDING_SLACK = 1e-12


class EpsUnderflowError(NumericalError):
    """The maximum allowed error probability underflowed to (sub)normal zero."""


@dataclass
class RateDecision:
    target_eps: float
    eps_n: float
    angular_quantile: float
    rate_bits: float
    max_r: float
    model_ref: str
    # audit trail
    argument_a: float = math.nan
    test_quantile: float = math.nan
    train_probability: float = math.nan
    train_beta: tuple = (math.nan, math.nan)
    test_beta: tuple = (math.nan, math.nan)
    eps_n_exceeds_target: bool = False
    eps_n_underflow: bool = False

    def to_dict(self) -> dict:
        d = asdict(self)
        d["train_beta"] = list(self.train_beta)
        d["test_beta"] = list(self.test_beta)
        return d


@dataclass
class OutageReport:
    rate_bits: float
    empirical_outage: float
    model_outage: float
    n_test: int
    satisfied: bool
    target_eps: float
    violations: int
    joint_count: int
    conditional_outage: float
    z_mode: str = "angular"
    z_domain_mismatch: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)


def _check_eps(eps):
    if not 0.0 < eps < 1.0:
        raise ArgumentError(f"target error probability must lie in (0, 1), got {eps}")


def eps_n_from(max_r: float, train: BetaParams, test: BetaParams, eps: float):
    """``exp((2/max_r) * H_train(H_test^-1(eps)))`` and its intermediate values."""
    _check_eps(eps)
    if not max_r < 0:
        raise DomainError(f"max_r must be negative, got {max_r}")
    q_test = beta_inv_cdf(eps, test)
    h = beta_cdf(q_test, train)
    return math.exp((2.0 / max_r) * h), q_test, h


def compute_eps_n(model: BgpdModel, test_angular: BetaParams, eps: float) -> float:
    return eps_n_from(model.max_r, model.angular.beta, test_angular, eps)[0]


def angular_argument(max_r: float, eps_n: float) -> float:
    """``a = max_r * ln(eps_n) / 2``; must lie in [0, 1]."""
    if not 0.0 < eps_n <= 1.0:
        raise DomainError(f"eps_n must lie in (0, 1], got {eps_n!r} (max_r={max_r!r})")
    a = 0.5 * max_r * math.log(eps_n)
    if -ROUNDING_SLACK <= a < 0.0:
        a = 0.0
    elif 1.0 < a <= 1.0 + ROUNDING_SLACK:
        a = 1.0
    if not 0.0 <= a <= 1.0:
        raise DomainError(f"angular argument {a!r} outside [0, 1] for max_r={max_r!r}, eps_n={eps_n!r}")
    return a


def invert_bgpd(model: BgpdModel, eps_n: float) -> float:
    """Angular quantile ``H^-1(max_r * ln(eps_n) / 2)``."""
    return float(beta_inv_cdf(angular_argument(model.max_r, eps_n), model.angular.beta))


def rate_chain(max_r: float, train: BetaParams, test: BetaParams, eps: float, model_ref: str = "",
               on_underflow: str = "raise") -> RateDecision:
    """Full quantile chain shared by the tail model and the baseline.

    ``on_underflow`` decides what happens when ``eps_n`` falls below the
    smallest normal float: ``"raise"`` or ``"flag"`` (rate 0, flagged).
    """
    eps_n, q_test, h = eps_n_from(max_r, train, test, eps)
    common = dict(target_eps=eps, eps_n=eps_n, max_r=max_r, model_ref=model_ref,
                  test_quantile=float(q_test), train_probability=float(h),
                  train_beta=(train.p, train.q), test_beta=(test.p, test.q),
                  eps_n_exceeds_target=eps_n > eps)
    if eps_n < TINY:
        if on_underflow == "flag":
            return RateDecision(angular_quantile=0.0, rate_bits=0.0, argument_a=math.nan,
                                eps_n_underflow=True, **common)
        raise EpsUnderflowError(
            f"eps_n = {eps_n!r} underflowed (max_r={max_r!r}, H_train(H_test^-1(eps))={h!r})")
    a = angular_argument(max_r, eps_n)
    quantile = float(beta_inv_cdf(a, train))
    return RateDecision(angular_quantile=quantile, rate_bits=math.log2(1.0 + quantile), argument_a=a, **common)


def select_rate(model: BgpdModel, eps: float, test_angular: BetaParams | None = None,
                on_underflow: str = "raise") -> RateDecision:
    """Rate ``log2(1 + H^-1(a))`` for target error probability ``eps``.

    ``test_angular`` defaults to the model's full-data reference fit.
    """
    if test_angular is None:
        if model.reference is None:
            raise ArgumentError("no test-side angular model: pass test_angular or attach a reference fit")
        test_angular = model.reference.beta
    return rate_chain(model.max_r, model.angular.beta, test_angular, eps, model.ref(), on_underflow)


def _values(seq):
    return seq.values if isinstance(seq, IidSequence) else np.asarray(seq, dtype=float)


def assess_outage(decision: RateDecision, test_x, test_y, model: BgpdModel,
                  tails: tuple[TailModel, TailModel] | None = None,
                  test_angular: BetaParams | None = None, z_mode: str = "angular") -> OutageReport:
    """Held-out outage of ``decision.rate_bits``.

    An instant is in outage when it lies in the joint tail and
    ``log2(1 + Z) < rate``, where ``Z`` is its angular coordinate under the
    full-data tails (``tails``, by default the model's reference tails).
    Instants outside the joint tail cannot be in outage.

    ``z_mode="radial"`` instead uses the radial coordinate
    ``-x~/N - y~/N`` and reports the fraction of those values that fall
    outside [0, 1], the domain of the Beta CDF they are compared against.
    """
    xv, yv = _values(test_x), _values(test_y)
    n_test = int(xv.size)
    if n_test == 0:
        raise DataError("empty test set")
    if xv.size != yv.size:
        raise DataError("test channels are not aligned")
    if tails is None:
        tails = (model.reference.tail_x, model.reference.tail_y) if model.reference else (model.tail_x, model.tail_y)
    if test_angular is None:
        test_angular = model.reference.beta if model.reference else model.angular.beta
    idx, omega = angular_components(xv, yv, tails[0], tails[1])
    mismatch = 0.0
    if z_mode == "angular":
        z = omega
    elif z_mode == "radial":
        fr = frechet_transform(JointTailSample(xv[idx], yv[idx], n_test, idx), tails[0], tails[1])
        z = -fr.x_tilde / n_test - fr.y_tilde / n_test
        mismatch = float(np.mean((z < 0) | (z > 1))) if z.size else 0.0
    else:
        raise ArgumentError(f"unknown z_mode {z_mode!r}")
    with np.errstate(invalid="ignore", divide="ignore"):
        below = np.log2(1.0 + z) < decision.rate_bits
    violations = int(np.count_nonzero(below))
    empirical = violations / n_test
    model_outage = float(beta_cdf(decision.angular_quantile, test_angular))
    return OutageReport(decision.rate_bits, empirical, model_outage, n_test,
                        empirical <= decision.target_eps, decision.target_eps, violations, int(idx.size),
                        violations / idx.size if idx.size else 0.0, z_mode, mismatch)
