"""Raw channel traces: ingestion, stationarity testing, declustering and the
cross-channel correlation gate."""
from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ArgumentError, DataError, NumericalError, ParseError

CSV_HEADER = ("timestamp", "rx1", "rx2")
RECEIVERS = ("rx1", "rx2")


class Unit(str, enum.Enum):
    DBM = "dbm"
    MW = "mw"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ArgumentError(f"unknown unit {value!r}; expected 'dbm' or 'mw'") from None


def dbm_to_mw(values):
    return np.power(10.0, np.asarray(values, dtype=float) / 10.0)


def mw_to_dbm(values):
    values = np.asarray(values, dtype=float)
    if np.any(values <= 0):
        raise DataError("only positive milliwatt values have a dBm representation")
    return 10.0 * np.log10(values)


@dataclass
class PowerTrace:
    """Received power of one receiver, held internally in linear milliwatts.

    ``unit`` records the unit the values were supplied in.
    """

    receiver_id: str
    samples: np.ndarray
    unit: Unit = Unit.MW
    timestamps: np.ndarray | None = None

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float)
        self.unit = Unit.parse(self.unit)
        if self.samples.ndim != 1:
            raise DataError("a power trace is one-dimensional")
        if not np.all(np.isfinite(self.samples)):
            bad = int(np.flatnonzero(~np.isfinite(self.samples))[0])
            raise DataError(f"non-finite power value at sample {bad} of {self.receiver_id}")

    @property
    def sample_count(self) -> int:
        return int(self.samples.size)

    def __len__(self):
        return self.sample_count

    def in_unit(self, unit) -> np.ndarray:
        unit = Unit.parse(unit)
        return self.samples.copy() if unit is Unit.MW else mw_to_dbm(self.samples)

    def slice(self, start, stop) -> "PowerTrace":
        ts = None if self.timestamps is None else self.timestamps[start:stop]
        return PowerTrace(self.receiver_id, self.samples[start:stop], self.unit, ts)


@dataclass
class IidSequence:
    """Block minima of a trace; treated as i.i.d. samples downstream."""

    source: str
    values: np.ndarray
    cluster_size: int
    lag1_autocorr: float = float("nan")
    independent: bool = True
    autocorr_bound: float = 0.1

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)

    @property
    def n(self) -> int:
        return int(self.values.size)

    def __len__(self):
        return self.n

    def split(self, fraction):
        """Chronological train/test split; the first ``fraction`` trains."""
        if not 0.0 < fraction < 1.0:
            raise ArgumentError("train fraction must lie in (0, 1)")
        k = int(math.floor(fraction * self.n))
        return self.head(k), self.tail_from(k)

    def head(self, k) -> "IidSequence":
        return IidSequence(self.source, self.values[:k], self.cluster_size,
                           self.lag1_autocorr, self.independent, self.autocorr_bound)

    def tail_from(self, k) -> "IidSequence":
        return IidSequence(self.source, self.values[k:], self.cluster_size,
                           self.lag1_autocorr, self.independent, self.autocorr_bound)


@dataclass
class StationarityReport:
    test_statistic: float
    lag_order: int
    critical_values: dict
    is_stationary: bool
    level: float = 0.05
    nobs: int = 0
    group_size_M: int | None = None


# ------------------------------------------------------------------ ingest

def _parse_fast(path):
    try:
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    except (ValueError, IndexError):
        return None
    if data.shape[1] != len(CSV_HEADER):
        return None
    return data


def _parse_slow(path):
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        next(reader, None)
        for i, row in enumerate(reader, start=1):
            if not row:
                continue
            if len(row) != len(CSV_HEADER):
                raise ParseError(f"expected {len(CSV_HEADER)} fields, got {len(row)}", row=i)
            try:
                rows.append([float(v) for v in row])
            except ValueError:
                raise ParseError(f"cannot parse {row!r} as numbers", row=i) from None
    return np.array(rows, dtype=float).reshape(-1, len(CSV_HEADER))


def read_csv(path, unit="mw"):
    """Read a ``timestamp,rx1,rx2`` file into two :class:`PowerTrace` objects."""
    path = Path(path)
    unit = Unit.parse(unit)
    if not path.is_file():
        raise ParseError(f"input file {path} does not exist")
    with open(path, newline="") as fh:
        header = fh.readline().strip()
    if not header:
        raise ParseError(f"{path} is empty", row=0)
    fields = tuple(h.strip().lower() for h in header.split(","))
    if fields != CSV_HEADER:
        raise ParseError(f"header must be {','.join(CSV_HEADER)}, got {header!r}", row=0)
    data = _parse_fast(path)
    if data is None:
        data = _parse_slow(path)
    if data.shape[0] == 0:
        raise ParseError(f"{path} has a header but no data rows", row=1)
    bad = ~np.isfinite(data)
    if bad.any():
        r, c = np.argwhere(bad)[0]
        raise DataError(f"row {r + 1}: non-finite value in column {CSV_HEADER[c]}")
    ts = data[:, 0]
    traces = []
    for col, rx in enumerate(RECEIVERS, start=1):
        values = data[:, col] if unit is Unit.MW else dbm_to_mw(data[:, col])
        traces.append(PowerTrace(rx, values, unit, ts))
    return traces[0], traces[1]


def ingest(path, unit="mw", receiver_id="rx1") -> PowerTrace:
    if receiver_id not in RECEIVERS:
        raise ArgumentError(f"receiver_id must be one of {RECEIVERS}")
    rx1, rx2 = read_csv(path, unit)
    return rx1 if receiver_id == "rx1" else rx2


def write_csv(path, rx1: PowerTrace, rx2: PowerTrace, unit="mw", timestamps=None):
    unit = Unit.parse(unit)
    if rx1.sample_count != rx2.sample_count:
        raise DataError("receiver traces differ in length")
    if timestamps is None:
        timestamps = np.arange(rx1.sample_count, dtype=float)
    a, b = rx1.in_unit(unit), rx2.in_unit(unit)
    with open(path, "w", newline="") as fh:
        fh.write(",".join(CSV_HEADER) + "\n")
        for t, x, y in zip(timestamps, a, b):
            fh.write(f"{t:.17g},{x:.17g},{y:.17g}\n")


def parse_groups(spec: str, n: int):
    """Parse ``a:b,c:d`` index ranges into ``[(a, b), (c, d)]``."""
    groups = []
    for part in spec.split(","):
        part = part.strip()
        if not part:
            continue
        try:
            a, b = (int(v) for v in part.split(":"))
        except ValueError:
            raise ArgumentError(f"bad group range {part!r}; expected start:stop") from None
        if not 0 <= a < b <= n:
            raise ArgumentError(f"group range {part!r} outside [0, {n}]")
        groups.append((a, b))
    if not groups:
        raise ArgumentError("empty --groups specification")
    return groups


# ------------------------------------------------------------------ ADF

# MacKinnon (2010) response surfaces, constant-only regression, one series:
# crit(T) = b0 + b1/T + b2/T^2 + b3/T^3
_ADF_CRIT_CONST = {
    0.01: (-3.43035, -6.5393, -16.786, -79.433),
    0.05: (-2.86154, -2.8903, -4.234, -40.040),
    0.10: (-2.56677, -1.5384, -2.809, 0.0),
}


def adf_critical_values(nobs):
    return {lvl: b[0] + b[1] / nobs + b[2] / nobs ** 2 + b[3] / nobs ** 3
            for lvl, b in _ADF_CRIT_CONST.items()}


def schwert_lag(n):
    return int(math.floor(12.0 * (n / 100.0) ** 0.25))


def adf_test(trace, lag_order=None, level=0.05, chunk=50_000) -> StationarityReport:
    """Augmented Dickey-Fuller test with an intercept.

    The regression ``dy_t = a + g*y_{t-1} + sum_i b_i*dy_{t-i}`` is solved
    through accumulated normal equations so long traces never materialise
    the full design matrix.
    """
    y = np.asarray(trace.samples if isinstance(trace, PowerTrace) else trace, dtype=float)
    n = y.size
    if lag_order is None:
        lag_order = schwert_lag(n)
    lag_order = int(lag_order)
    if lag_order < 0:
        raise ArgumentError("lag_order must be nonnegative")
    if level not in _ADF_CRIT_CONST:
        raise ArgumentError(f"level must be one of {sorted(_ADF_CRIT_CONST)}")
    if n <= 10 * (lag_order + 2):
        raise DataError(f"ADF with {lag_order} lags needs more than {10 * (lag_order + 2)} samples, got {n}")
    scale = np.std(y)
    if not scale > 0:
        raise NumericalError("ADF regression is singular: the trace has zero variance")
    y = (y - y.mean()) / scale
    dy = np.diff(y)
    k = lag_order
    nobs = dy.size - k
    p = k + 2
    xtx = np.zeros((p, p))
    xty = np.zeros(p)
    yty = 0.0
    for start in range(0, nobs, chunk):
        stop = min(start + chunk, nobs)
        t = np.arange(start + k, stop + k)  # index into dy
        X = np.empty((t.size, p))
        X[:, 0] = 1.0
        X[:, 1] = y[t]  # y_{t-1} relative to dy[t] = y[t+1]-y[t]
        for i in range(1, k + 1):
            X[:, 1 + i] = dy[t - i]
        target = dy[t]
        xtx += X.T @ X
        xty += X.T @ target
        yty += float(target @ target)
    try:
        cond = np.linalg.cond(xtx)
        if not np.isfinite(cond) or cond > 1e14:
            raise np.linalg.LinAlgError("ill-conditioned")
        beta = np.linalg.solve(xtx, xty)
        inv = np.linalg.inv(xtx)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"ADF regression matrix is singular: {exc}") from None
    rss = max(yty - float(beta @ xty), 0.0)
    dof = nobs - p
    s2 = rss / dof
    se = math.sqrt(s2 * inv[1, 1])
    if not se > 0:
        raise NumericalError("ADF regression has zero residual variance")
    stat = float(beta[1] / se)
    crit = adf_critical_values(nobs)
    return StationarityReport(stat, k, crit, stat < crit[level], level, nobs)


# ------------------------------------------------------------- declustering

def lag1_autocorrelation(values) -> float:
    v = np.asarray(values, dtype=float)
    if v.size < 3:
        return float("nan")
    d = v - v.mean()
    denom = float(d @ d)
    if denom == 0:
        return float("nan")
    return float(d[:-1] @ d[1:]) / denom


def decluster(trace, cluster_size, autocorr_bound=0.1) -> IidSequence:
    """Block minima over consecutive clusters; a trailing partial block is dropped."""
    if int(cluster_size) != cluster_size or cluster_size <= 0:
        raise ArgumentError(f"cluster_size must be a positive integer, got {cluster_size}")
    cluster_size = int(cluster_size)
    values = trace.samples if isinstance(trace, PowerTrace) else np.asarray(trace, dtype=float)
    source = trace.receiver_id if isinstance(trace, PowerTrace) else "series"
    if values.size < cluster_size:
        raise ArgumentError(f"trace of length {values.size} is shorter than one cluster ({cluster_size})")
    m = values.size // cluster_size
    minima = values[: m * cluster_size].reshape(m, cluster_size).min(axis=1)
    rho = lag1_autocorrelation(minima)
    independent = bool(np.isnan(rho) or abs(rho) < autocorr_bound)
    return IidSequence(source, minima, cluster_size, rho, independent, autocorr_bound)


# ------------------------------------------------------------- correlation gate

class Diversity(str, enum.Enum):
    REASONABLE = "DiversityReasonable"
    TOO_CORRELATED = "TooCorrelated"
    TAILS_INDEPENDENT = "TailsIndependent"


@dataclass
class CorrelationReport:
    coefficient: float
    tail_coefficient: float
    tail_count: int
    verdict: Diversity
    bounds: tuple = field(default=(0.1, 0.5))


def pearson(x, y) -> float:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(dx @ dx)
    syy = float(dy @ dy)
    if sxx == 0 or syy == 0:
        raise NumericalError("correlation undefined: a sequence has zero variance")
    return float(dx @ dy) / math.sqrt(sxx * syy)


def correlation_gate(x, y, low=0.1, high=0.5, tail_quantile=0.1, independence_bound=0.1) -> CorrelationReport:
    """Classify two declustered channels for diversity.

    ``DiversityReasonable`` when the overall Pearson coefficient lies in
    ``[low, high]``. Otherwise the coefficient is recomputed on the joint
    lower tail (both channels below their ``tail_quantile`` empirical
    quantile): ``TailsIndependent`` if its magnitude is below
    ``independence_bound``, ``TooCorrelated`` if not.
    """
    xv = x.values if isinstance(x, IidSequence) else np.asarray(x, dtype=float)
    yv = y.values if isinstance(y, IidSequence) else np.asarray(y, dtype=float)
    if xv.size != yv.size:
        raise ArgumentError("correlation gate needs sequences of equal length")
    if xv.size < 2:
        raise ArgumentError("correlation gate needs at least two samples")
    rho = pearson(xv, yv)
    mask = (xv < np.quantile(xv, tail_quantile)) & (yv < np.quantile(yv, tail_quantile))
    count = int(mask.sum())
    try:
        rho_tail = pearson(xv[mask], yv[mask]) if count >= 30 else rho
    except NumericalError:
        rho_tail = rho
    if low <= rho <= high:
        verdict = Diversity.REASONABLE
    elif abs(rho_tail) < independence_bound:
        verdict = Diversity.TAILS_INDEPENDENT
    else:
        verdict = Diversity.TOO_CORRELATED
    return CorrelationReport(rho, rho_tail, count, verdict, (low, high))
