"""Joint lower-tail model of two channels.

Simultaneous exceedances are mapped to unit-Fréchet margins, then to
pseudo-polar (radial, angular) coordinates; the angular component is
modelled with a Beta distribution and the joint tail follows from the
Poisson point-process intensity.

Sign convention: Fréchet values are stored positive, the radial
coordinate ``r = -x~/n - y~/n`` is negative and ``max_r`` is the value
closest to zero.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import serialize
from .errors import DomainError, EmptyTailError, TransformError
from .specfun import BetaParams, beta_cdf, beta_fit, clamp_unit_interval
from .tail_fit import TailModel, fit_gpd
from .trace import IidSequence

MODEL_FORMAT = "tailrate.bgpd"
MODEL_VERSION = 1
MEAN_CONSTRAINT_WARN = 0.05


class MeanConstraintWarning(UserWarning):
    """Fitted angular mean is far from 1/2."""


@dataclass
class JointTailSample:
    x_exceed: np.ndarray
    y_exceed: np.ndarray
    n: int
    indices: np.ndarray

    def __post_init__(self):
        self.x_exceed = np.asarray(self.x_exceed, dtype=float)
        self.y_exceed = np.asarray(self.y_exceed, dtype=float)
        self.indices = np.asarray(self.indices, dtype=np.int64)
        if not (self.x_exceed.size == self.y_exceed.size == self.indices.size):
            raise ValueError("joint tail arrays must have equal lengths")

    @property
    def count(self) -> int:
        return int(self.x_exceed.size)


@dataclass
class FrechetPair:
    x_tilde: np.ndarray
    y_tilde: np.ndarray
    n: int


@dataclass
class PickandsCoords:
    r: np.ndarray
    omega: np.ndarray
    max_r: float


@dataclass
class AngularModel:
    beta: BetaParams
    mean_omega: float
    mean_constraint_deviation: float
    clamp_eps: float = 0.0
    n_clamped: int = 0
    symmetric: bool = False

    def cdf(self, w):
        return beta_cdf(w, self.beta)


@dataclass
class ReferenceAngular:
    """Angular Beta fit of the full (train + test) data.

    The tails are refitted on the full data at the training thresholds and
    kept so held-out instants can be mapped to the same angular scale.
    """

    beta: BetaParams
    tail_x: TailModel
    tail_y: TailModel
    n: int


def _tail_dict(m: TailModel) -> dict:
    return {"threshold_u": m.threshold_u, "scale_sigma": m.scale_sigma, "shape_xi": m.shape_xi,
            "zeta": m.zeta, "n_exceed": m.n_exceed, "n_total": m.n_total,
            "log_likelihood": m.log_likelihood}


def _tail_from_dict(d) -> TailModel:
    return TailModel(float(d["threshold_u"]), float(d["scale_sigma"]), float(d["shape_xi"]),
                     float(d["zeta"]), int(d["n_exceed"]), float(d["log_likelihood"]),
                     int(d.get("n_total", 0)))


@dataclass
class BgpdModel:
    tail_x: TailModel
    tail_y: TailModel
    angular: AngularModel
    frechet: FrechetPair
    pickands: PickandsCoords
    joint: JointTailSample = field(repr=False, default=None)
    reference: ReferenceAngular | None = None

    @property
    def max_r(self) -> float:
        return self.pickands.max_r

    @property
    def n(self) -> int:
        return self.frechet.n

    def to_dict(self) -> dict:
        a = self.angular
        ref = self.reference
        return {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "n": self.n,
            "max_r": self.max_r,
            "tail_x": _tail_dict(self.tail_x),
            "tail_y": _tail_dict(self.tail_y),
            "angular": {"p": a.beta.p, "q": a.beta.q, "mean_omega": a.mean_omega,
                        "mean_constraint_deviation": a.mean_constraint_deviation,
                        "clamp_eps": a.clamp_eps, "n_clamped": a.n_clamped, "symmetric": a.symmetric},
            "reference": None if ref is None else
            {"p": ref.beta.p, "q": ref.beta.q, "n": ref.n,
             "tail_x": _tail_dict(ref.tail_x), "tail_y": _tail_dict(ref.tail_y)},
            "joint": {"indices": self.joint.indices, "x": self.joint.x_exceed, "y": self.joint.y_exceed},
        }

    def to_json(self) -> str:
        return serialize.dumps(self.to_dict())

    def ref(self) -> str:
        return serialize.content_hash(self.to_dict())

    @classmethod
    def from_dict(cls, doc: dict) -> "BgpdModel":
        if doc.get("format") != MODEL_FORMAT:
            raise ValueError("not a BGPD model document")
        if doc.get("version") != MODEL_VERSION:
            raise ValueError(f"unsupported model version {doc.get('version')}")
        tx, ty = _tail_from_dict(doc["tail_x"]), _tail_from_dict(doc["tail_y"])
        j = doc["joint"]
        joint = JointTailSample(np.array(j["x"], dtype=float), np.array(j["y"], dtype=float),
                                int(doc["n"]), np.array(j["indices"], dtype=np.int64))
        fr = frechet_transform(joint, tx, ty)
        pk = pickands_transform(fr)
        a = doc["angular"]
        ang = AngularModel(BetaParams(float(a["p"]), float(a["q"])), float(a["mean_omega"]),
                           float(a["mean_constraint_deviation"]), float(a["clamp_eps"]),
                           int(a["n_clamped"]), bool(a["symmetric"]))
        ref = doc.get("reference")
        if ref is not None:
            ref = ReferenceAngular(BetaParams(float(ref["p"]), float(ref["q"])),
                                   _tail_from_dict(ref["tail_x"]), _tail_from_dict(ref["tail_y"]), int(ref["n"]))
        return cls(tx, ty, ang, fr, pk, joint, ref)

    @classmethod
    def from_json(cls, text: str) -> "BgpdModel":
        return cls.from_dict(serialize.loads(text))


# ---------------------------------------------------------------- stages

def _values(seq):
    return seq.values if isinstance(seq, IidSequence) else np.asarray(seq, dtype=float)


def joint_filter(x, y, ux: float, uy: float) -> JointTailSample:
    """Keep only the instants where both channels are below their thresholds."""
    xv, yv = _values(x), _values(y)
    if xv.size != yv.size:
        raise ValueError(f"channels are not aligned: {xv.size} vs {yv.size} samples")
    idx = np.flatnonzero((xv < ux) & (yv < uy))
    if idx.size == 0:
        raise EmptyTailError(f"no simultaneous exceedances below u_x={ux:.6g}, u_y={uy:.6g}")
    return JointTailSample(xv[idx], yv[idx], int(xv.size), idx)


def frechet_from_probability(p, indices=None):
    """Map tail probabilities ``p = P(X < x)`` to unit-Fréchet values ``-1/log(1 - p)``.

    Shared by the GPD tail model and the parametric baseline margins.
    """
    p = np.asarray(p, dtype=float)
    bad = ~((p > 0) & (p < 1))
    if np.any(bad):
        k = int(np.flatnonzero(bad.ravel())[0])
        where = k if indices is None else int(np.asarray(indices).ravel()[k])
        raise TransformError(f"log argument 1 - p = {1 - p.ravel()[k]!r} is not in (0, 1)", where)
    return -1.0 / np.log1p(-p)


def frechet_transform(joint: JointTailSample, mx: TailModel, my: TailModel) -> FrechetPair:
    xt = frechet_from_probability(mx.tail_probability(joint.x_exceed), joint.indices)
    yt = frechet_from_probability(my.tail_probability(joint.y_exceed), joint.indices)
    return FrechetPair(xt, yt, joint.n)


def pickands_transform(fr: FrechetPair) -> PickandsCoords:
    if fr.n <= 0:
        raise DomainError("training length must be positive")
    xt, yt = fr.x_tilde, fr.y_tilde
    if xt.size == 0:
        raise TransformError("no samples to transform")
    r = -xt / fr.n - yt / fr.n
    zero = r == 0
    if np.any(zero):
        raise TransformError("radial component is zero", int(np.flatnonzero(zero)[0]))
    # (-x~/n)/r written so it stays accurate when one coordinate dominates
    omega = 1.0 / (1.0 + yt / xt)
    return PickandsCoords(r, omega, float(r.max()))


def fit_angular(pk: PickandsCoords, symmetric: bool = False, warn: bool = True) -> AngularModel:
    w, moved, eps = clamp_unit_interval(pk.omega)
    beta = beta_fit(w, symmetric=symmetric)
    mean = float(np.mean(pk.omega))
    dev = abs(mean - 0.5)
    if warn and dev > MEAN_CONSTRAINT_WARN:
        warnings.warn(f"angular mean {mean:.4f} deviates from 1/2 by {dev:.4f}",
                      MeanConstraintWarning, stacklevel=2)
    return AngularModel(beta, mean, dev, eps, moved, symmetric)


def build_bgpd(x, y, ux: float | None = None, uy: float | None = None,
               tail_x: TailModel | None = None, tail_y: TailModel | None = None,
               symmetric: bool = False, warn: bool = True) -> BgpdModel:
    """Fit both tails (unless given) and the joint angular model."""
    if tail_x is None:
        tail_x = fit_gpd(x, ux, warn=warn)
    if tail_y is None:
        tail_y = fit_gpd(y, uy, warn=warn)
    joint = joint_filter(x, y, tail_x.threshold_u, tail_y.threshold_u)
    fr = frechet_transform(joint, tail_x, tail_y)
    pk = pickands_transform(fr)
    ang = fit_angular(pk, symmetric=symmetric, warn=warn)
    return BgpdModel(tail_x, tail_y, ang, fr, pk, joint)


def angular_components(x, y, tail_x: TailModel, tail_y: TailModel):
    """Angular coordinate of every joint-tail instant of ``(x, y)`` under the given tails.

    Returns ``(indices, omega)``; instants outside the joint tail are omitted.
    """
    xv, yv = _values(x), _values(y)
    idx = np.flatnonzero((xv < tail_x.threshold_u) & (yv < tail_y.threshold_u))
    if idx.size == 0:
        return idx, np.empty(0)
    joint = JointTailSample(xv[idx], yv[idx], int(xv.size), idx)
    fr = frechet_transform(joint, tail_x, tail_y)
    return idx, 1.0 / (1.0 + fr.y_tilde / fr.x_tilde)


def reference_angular_fit(x_full, y_full, ux: float, uy: float, symmetric: bool = False) -> ReferenceAngular:
    """Refit both tails on the full data at the training thresholds and fit
    the Beta to the resulting angular component."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        model = build_bgpd(x_full, y_full, ux, uy, symmetric=symmetric, warn=False)
    return ReferenceAngular(model.angular.beta, model.tail_x, model.tail_y, model.n)


# ---------------------------------------------------------------- evaluation

def exponent_measure(model: BgpdModel, omega):
    """``Lambda = (-2/max_r) * H(omega)``."""
    mr = model.max_r
    if not mr < 0:
        raise DomainError(f"max_r must be negative, got {mr}")
    return (-2.0 / mr) * np.asarray(beta_cdf(omega, model.angular.beta))


def bgpd_cdf_at_angle(model: BgpdModel, omega):
    out = np.exp(-exponent_measure(model, omega))
    return out if np.ndim(out) else float(out)


def bgpd_cdf(model: BgpdModel, x_tilde, y_tilde):
    """Joint tail CDF ``G = exp(-Lambda)`` at Fréchet-scale coordinates."""
    xt = np.asarray(x_tilde, dtype=float)
    yt = np.asarray(y_tilde, dtype=float)
    if np.any(~(xt > 0)) or np.any(~(yt > 0)) or np.any(~np.isfinite(xt)) or np.any(~np.isfinite(yt)):
        raise DomainError("Fréchet coordinates must be positive and finite")
    return bgpd_cdf_at_angle(model, 1.0 / (1.0 + yt / xt))


def summary(model: BgpdModel) -> dict:
    return {"n": model.n, "joint_count": model.joint.count, "max_r": model.max_r,
            "p": model.angular.beta.p, "q": model.angular.beta.q,
            "mean_omega": model.angular.mean_omega,
            "mean_constraint_deviation": model.angular.mean_constraint_deviation,
            "clamp_eps": model.angular.clamp_eps, "n_clamped": model.angular.n_clamped}
