"""End-to-end rate selection: ingest, gates, tail fits, joint model, rate,
outage, intervals and the baseline comparison, with every stage's
artifacts written to an output directory."""
from __future__ import annotations

import contextlib
import warnings
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import baseline as bl
from . import confidence as ci
from . import plotting, serialize
from .bivariate import BgpdModel, build_bgpd, reference_angular_fit, summary
from .errors import ArgumentError, GateStop, TailrateError
from .rate import assess_outage, select_rate
from .tail_fit import FitDiagnostics, TailModel, threshold_diagnostics, validate_fit
from .trace import (Diversity, IidSequence, PowerTrace, adf_test, correlation_gate, decluster,
                    parse_groups, read_csv)

DEFAULT_EPS = (1e-3, 1e-4, 1e-5)
FALLBACK_QUANTILE = 0.05


class ThresholdWarning(UserWarning):
    pass


@dataclass
class PipelineConfig:
    inputs: list
    output_dir: str = "report"
    unit: str = "mw"
    cluster_size: int = 1
    ux: float | None = None
    uy: float | None = None
    eps_list: tuple = DEFAULT_EPS
    alpha_list: tuple = (0.05,)
    bootstrap: int = 200
    seed: int = 0
    train_fraction: float = 0.5
    threads: int = 1
    groups: str | None = None
    adf_lag: int | None = None
    adf_level: float = 0.05
    pp_bound: float = 0.05
    symmetric: bool = False
    jackknife_mode: str = "loo"
    bulk_quantile: float | None = None
    with_ci: bool = True
    with_baseline: bool = True
    figures: bool = True

    def __post_init__(self):
        if isinstance(self.inputs, (str, Path)):
            self.inputs = [self.inputs]
        self.inputs = [str(p) for p in self.inputs]
        if not 0.0 < self.train_fraction < 1.0:
            raise ArgumentError("train fraction must lie in (0, 1)")
        self.eps_list = tuple(float(e) for e in self.eps_list)
        self.alpha_list = tuple(float(a) for a in self.alpha_list)
        for e in self.eps_list:
            if not 0.0 < e < 1.0:
                raise ArgumentError(f"target error probability {e} outside (0, 1)")
        for a in self.alpha_list:
            if not 0.0 < a < 1.0:
                raise ArgumentError(f"significance level {a} outside (0, 1)")
        if (self.ux is None) != (self.uy is None):
            raise ArgumentError("give both thresholds or neither")
        if int(self.cluster_size) < 1:
            raise ArgumentError("cluster size must be a positive integer")
        if int(self.bootstrap) < 1:
            raise ArgumentError("bootstrap rounds must be positive")
        if int(self.threads) < 1:
            raise ArgumentError("threads must be positive")

    def to_dict(self) -> dict:
        """Result-affecting settings only; thread count and output location
        are left out so bundles compare byte-for-byte."""
        d = asdict(self)
        del d["threads"], d["output_dir"]
        d["eps_list"] = list(self.eps_list)
        d["alpha_list"] = list(self.alpha_list)
        return d


_HINTS = {
    "ingest": "check the path and that the header is timestamp,rx1,rx2",
    "adf_test": "the trace looks non-stationary; split it into stationary groups with --groups",
    "decluster": "choose a cluster size smaller than the trace",
    "correlation_gate": "independent tails need no joint model; treat the channels separately",
    "thresholds": "set --ux/--uy explicitly",
    "fit_gpd": "lower the threshold so at least 30 samples lie below it, or check the data",
    "validate_fit": "revisit the thresholds using the diagnose subcommand",
    "joint_model": "lower the thresholds so more instants are jointly in the tail",
    "select_rate": "try a larger target error probability or more training data",
    "assess_outage": "check the held-out part of the input",
    "confidence": "increase --bootstrap or widen the thresholds",
    "baseline": "check the margin fits in baseline.json",
}


@contextlib.contextmanager
def stage(name: str):
    """Tag package errors raised inside with the stage name and a hint."""
    try:
        yield
    except TailrateError as exc:
        if not hasattr(exc, "stage"):
            exc.stage = name
            exc.hint = _HINTS.get(name, "")
        raise


# ------------------------------------------------------------------ stages

@dataclass
class Prepared:
    rx1: PowerTrace
    rx2: PowerTrace
    stationarity: dict
    x: IidSequence
    y: IidSequence
    correlation: object
    x_train: IidSequence
    y_train: IidSequence
    x_test: IidSequence
    y_test: IidSequence


def load_traces(config: PipelineConfig):
    with stage("ingest"):
        rx1, rx2 = read_csv(config.inputs[0], config.unit)
        for extra in config.inputs[1:]:
            a, b = read_csv(extra, config.unit)
            rx1 = PowerTrace("rx1", np.concatenate([rx1.samples, a.samples]), rx1.unit)
            rx2 = PowerTrace("rx2", np.concatenate([rx2.samples, b.samples]), rx2.unit)
    return rx1, rx2


def prepare(config: PipelineConfig, rx1: PowerTrace, rx2: PowerTrace, gates: bool = True,
            out: Path | None = None) -> Prepared:
    """Stationarity, declustering, correlation gate and the chronological split.

    With ``out`` the gate reports are written before a gate can stop the run.
    """
    with stage("adf_test"):
        st = {rx.receiver_id: adf_test(rx, config.adf_lag, config.adf_level) for rx in (rx1, rx2)}
    if out is not None:
        serialize.write_json(out / "stationarity.json", {k: _stationarity_dict(v) for k, v in st.items()})
    if gates:
        for rid, rep in st.items():
            if not rep.is_stationary:
                err = GateStop("stationarity", f"{rid} ADF statistic {rep.test_statistic:.4g} does not reject "
                                               f"a unit root at level {rep.level}")
                err.stage, err.hint = "adf_test", _HINTS["adf_test"]
                raise err
    with stage("decluster"):
        x = decluster(rx1, config.cluster_size)
        y = decluster(rx2, config.cluster_size)
    with stage("correlation_gate"):
        corr = correlation_gate(x, y)
    if out is not None:
        serialize.write_json(out / "correlation.json", _corr_doc(corr))
    if corr.verdict is Diversity.TOO_CORRELATED:
        warnings.warn(f"channels are strongly correlated (Pearson {corr.coefficient:.3f}); "
                      "diversity gain will be small", UserWarning, stacklevel=2)
    if gates and corr.verdict is Diversity.TAILS_INDEPENDENT:
        err = GateStop("correlation", f"tails are independent (tail Pearson {corr.tail_coefficient:.3f})")
        err.stage, err.hint = "correlation_gate", _HINTS["correlation_gate"]
        raise err
    x_train, x_test = x.split(config.train_fraction)
    y_train, y_test = y.split(config.train_fraction)
    return Prepared(rx1, rx2, {k: _stationarity_dict(v) for k, v in st.items()}, x, y, corr,
                    x_train, y_train, x_test, y_test)


def _stationarity_dict(rep) -> dict:
    return {"test_statistic": rep.test_statistic, "lag_order": rep.lag_order,
            "critical_values": {str(k): v for k, v in rep.critical_values.items()},
            "is_stationary": rep.is_stationary, "level": rep.level, "nobs": rep.nobs}


def choose_threshold(seq: IidSequence, label: str):
    """Lower of the two diagnostic suggestions, else the 5% empirical quantile."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        diag = threshold_diagnostics(seq)
    if diag.suggested_u is None:
        u = float(np.quantile(seq.values, FALLBACK_QUANTILE))
        warnings.warn(f"{label}: no threshold passed the diagnostics; using the "
                      f"{FALLBACK_QUANTILE:.0%} empirical quantile {u:.6g}", ThresholdWarning, stacklevel=2)
        return u, diag, "fallback_quantile"
    return float(diag.suggested_u), diag, "diagnostics"


def fit_model(config: PipelineConfig, prep: Prepared, gates: bool = True):
    """Thresholds, both tail fits with PP validation, joint model and full-data reference."""
    diags = {}
    with stage("thresholds"):
        if config.ux is None:
            ux, dx, how = choose_threshold(prep.x_train, "rx1")
            uy, dy, _ = choose_threshold(prep.y_train, "rx2")
            diags = {"rx1": dx, "rx2": dy}
        else:
            ux, uy, how = float(config.ux), float(config.uy), "explicit"
    with stage("fit_gpd"):
        from .tail_fit import fit_gpd
        tx = fit_gpd(prep.x_train, ux)
        ty = fit_gpd(prep.y_train, uy)
    with stage("validate_fit"):
        vx = validate_fit(tx, prep.x_train, config.pp_bound)
        vy = validate_fit(ty, prep.y_train, config.pp_bound)
    if gates:
        for label, v in (("rx1", vx), ("rx2", vy)):
            if not v.passed:
                err = GateStop("pp_validation", f"{label} PP deviation {v.max_pp_deviation:.4f} exceeds "
                                                f"{v.bound}")
                err.stage, err.hint = "validate_fit", _HINTS["validate_fit"]
                raise err
    with stage("joint_model"):
        model = build_bgpd(prep.x_train, prep.y_train, tail_x=tx, tail_y=ty, symmetric=config.symmetric)
        model.reference = reference_angular_fit(prep.x, prep.y, ux, uy, config.symmetric)
    return model, {"ux": ux, "uy": uy, "mode": how}, diags, {"rx1": vx, "rx2": vy}


def decide(config: PipelineConfig, model: BgpdModel, prep: Prepared):
    decisions, outages = [], []
    for eps in config.eps_list:
        with stage("select_rate"):
            d = select_rate(model, eps)
        with stage("assess_outage"):
            o = assess_outage(d, prep.x_test, prep.y_test, model)
        decisions.append(d)
        outages.append(o)
    return decisions, outages


def intervals(config: PipelineConfig, model: BgpdModel, prep: Prepared, decisions):
    out = []
    with stage("confidence"):
        boots = ci.resample_tails(model, prep.x_train, prep.y_train, config.bootstrap, config.seed,
                                  config.threads, config.jackknife_mode)
        for alpha in config.alpha_list:
            for d in decisions:
                out.append(ci.rate_interval(model, d, prep.x_train, prep.y_train, alpha, config.bootstrap,
                                            config.seed, boots=boots))
    return out


def compare_baseline(config: PipelineConfig, model: BgpdModel, prep: Prepared):
    with stage("baseline"):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            bmodel, cands = bl.build_baseline(prep.x_train, prep.y_train, model.tail_x.threshold_u,
                                              model.tail_y.threshold_u, bulk_quantile=config.bulk_quantile,
                                              symmetric=config.symmetric)
        decisions, outages = [], []
        for eps in config.eps_list:
            d = bl.baseline_rate(bmodel, eps, model.reference.beta)
            decisions.append(d)
            outages.append(assess_outage(d, prep.x_test, prep.y_test, model))
    return bmodel, cands, decisions, outages


# ------------------------------------------------------------------ output

def write_threshold_curves(out: Path, diags: dict) -> None:
    for label, d in diags.items():
        serialize.write_csv(out / f"mrl_{label}.csv", ["threshold", "mean_excess", "ci_halfwidth", "count"],
                            d.mrl_curve)
        serialize.write_csv(out / f"stability_{label}.csv",
                            ["threshold", "xi", "modified_scale", "xi_halfwidth", "scale_halfwidth"],
                            d.stability_curves)


def _threshold_doc(diags: dict, chosen: dict) -> dict:
    doc = {"ux": chosen["ux"], "uy": chosen["uy"], "mode": chosen["mode"]}
    for label, d in diags.items():
        doc[label] = {"suggested_u": d.suggested_u, "mrl_suggested_u": d.mrl_suggested_u,
                      "stability_suggested_u": d.stability_suggested_u,
                      "candidates": list(map(float, d.candidate_thresholds))}
    return doc


def tail_doc(t: TailModel, fd: FitDiagnostics | None = None) -> dict:
    se = t.standard_errors
    d = {"threshold_u": t.threshold_u, "scale_sigma": t.scale_sigma, "shape_xi": t.shape_xi,
         "zeta": t.zeta, "n_exceed": t.n_exceed, "n_total": t.n_total, "log_likelihood": t.log_likelihood,
         "se_sigma": se[0], "se_xi": se[1]}
    if fd is not None:
        d["max_pp_deviation"] = fd.max_pp_deviation
        d["pp_bound"] = fd.bound
        d["pp_passed"] = fd.passed
    return d


def write_figures(out: Path, diags, fits, model: BgpdModel, compare_rows) -> list:
    names = []
    if diags:
        plotting.plot_mrl({k: (d.mrl_curve, d.mrl_suggested_u) for k, d in diags.items()}, out / "mrl.png")
        plotting.plot_stability({k: (d.stability_curves, d.stability_suggested_u) for k, d in diags.items()},
                                out / "stability.png")
        names += ["mrl.png", "stability.png"]
    plotting.plot_pp_qq(fits, out / "pp_qq.png")
    fits_beta = {"training": model.angular.beta}
    if model.reference is not None:
        fits_beta["full data"] = model.reference.beta
    plotting.plot_angular(model.pickands.omega, fits_beta, out / "angular.png")
    names += ["pp_qq.png", "angular.png"]
    if compare_rows:
        plotting.plot_rates(compare_rows, out / "rates.png")
        names.append("rates.png")
    return names


def run_single(config: PipelineConfig, rx1: PowerTrace, rx2: PowerTrace, out: Path) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    caught = []
    with warnings.catch_warnings(record=True) as rec:
        warnings.simplefilter("always")
        try:
            result = _run_stages(config, rx1, rx2, out)
        finally:
            caught[:] = [f"{w.category.__name__}: {w.message}" for w in rec]
            serialize.write_json(out / "warnings.json", sorted(set(caught)))
    return result


def _run_stages(config, rx1, rx2, out: Path) -> dict:
    serialize.write_json(out / "config.json", config.to_dict())
    prep = prepare(config, rx1, rx2, out=out)
    model, chosen, diags, fits = fit_model(config, prep)
    write_threshold_curves(out, diags)
    serialize.write_json(out / "thresholds.json", _threshold_doc(diags, chosen))
    serialize.write_json(out / "tails.json", {"rx1": tail_doc(model.tail_x, fits["rx1"]),
                                              "rx2": tail_doc(model.tail_y, fits["rx2"])})
    for label, fd in fits.items():
        serialize.write_csv(out / f"pp_qq_{label}.csv",
                            ["empirical_cdf", "model_cdf", "empirical_exceedance", "model_quantile"],
                            np.column_stack([fd.pp_points, fd.qq_points]).tolist())
    (out / "model.json").write_text(model.to_json() + "\n", encoding="utf-8")

    decisions, outages = decide(config, model, prep)
    serialize.write_json(out / "rates.json", [d.to_dict() for d in decisions])
    serialize.write_csv(out / "rates.csv", ["eps", "eps_n", "argument_a", "angular_quantile", "rate_bits",
                                            "eps_n_exceeds_target"],
                        [[d.target_eps, d.eps_n, d.argument_a, d.angular_quantile, d.rate_bits,
                          d.eps_n_exceeds_target] for d in decisions])
    serialize.write_json(out / "outage.json", [o.to_dict() for o in outages])

    ci_rows = []
    if config.with_ci:
        rate_ivs = intervals(config, model, prep, decisions)
        serialize.write_json(out / "ci.json", [dict(eps=iv.decision.target_eps, **iv.to_dict()) for iv in rate_ivs])
        ci_rows = rate_ivs

    compare_rows = []
    if config.with_baseline:
        bmodel, cands, bdec, bout = compare_baseline(config, model, prep)
        serialize.write_json(out / "baseline.json", {
            "model": bmodel.to_dict(),
            "candidates": {k: {fam: f.to_dict() for fam, f in v.items()} for k, v in zip(("rx1", "rx2"), cands)},
            "decisions": [d.to_dict() for d in bdec], "outage": [o.to_dict() for o in bout]})
        for d, o, db, ob in zip(decisions, outages, bdec, bout):
            row = {"eps": d.target_eps, "n": prep.x_train.n, "rate_mevt": d.rate_bits,
                   "rate_baseline": db.rate_bits, "outage_mevt": o.empirical_outage,
                   "outage_baseline": ob.empirical_outage}
            first = [iv for iv in ci_rows if iv.decision is d]
            if first:
                row["rate_lower"], row["rate_upper"] = first[0].rate_lower, first[0].rate_upper
            compare_rows.append(row)
        serialize.write_csv(out / "compare.csv",
                            ["eps", "n", "rate_mevt", "rate_baseline", "outage_mevt", "outage_baseline"],
                            [[r["eps"], r["n"], r["rate_mevt"], r["rate_baseline"], r["outage_mevt"],
                              r["outage_baseline"]] for r in compare_rows])

    figures = write_figures(out, diags, fits, model, compare_rows) if config.figures else []
    report = audit_report(model, chosen, decisions, outages, prep)
    report["figures"] = figures
    serialize.write_json(out / "report.json", report)
    return report


def _corr_doc(c) -> dict:
    return {"coefficient": c.coefficient, "tail_coefficient": c.tail_coefficient, "tail_count": c.tail_count,
            "verdict": c.verdict.value, "bounds": list(c.bounds)}


def audit_report(model: BgpdModel, chosen, decisions, outages, prep: Prepared) -> dict:
    """Everything needed to recompute each rate by hand."""
    return {
        "n_train": prep.x_train.n, "n_test": prep.x_test.n, "cluster_size": prep.x.cluster_size,
        "thresholds": {"ux": chosen["ux"], "uy": chosen["uy"], "mode": chosen["mode"]},
        "tails": {"rx1": tail_doc(model.tail_x), "rx2": tail_doc(model.tail_y)},
        "angular": summary(model),
        "reference_angular": {"p": model.reference.beta.p, "q": model.reference.beta.q, "n": model.reference.n},
        "model_ref": model.ref(),
        "decisions": [{"eps": d.target_eps, "eps_n": d.eps_n, "argument_a": d.argument_a,
                       "angular_quantile": d.angular_quantile, "rate_bits": d.rate_bits,
                       "max_r": d.max_r, "eps_n_exceeds_target": d.eps_n_exceeds_target,
                       "empirical_outage": o.empirical_outage, "model_outage": o.model_outage,
                       "satisfied": o.satisfied}
                      for d, o in zip(decisions, outages)],
        "satisfied": all(o.satisfied for o in outages),
    }


def run_pipeline(config: PipelineConfig) -> dict:
    """Run every stage; with ``groups`` each index range gets its own subdirectory."""
    out = Path(config.output_dir)
    rx1, rx2 = load_traces(config)
    if not config.groups:
        return run_single(config, rx1, rx2, out)
    with stage("ingest"):
        ranges = parse_groups(config.groups, rx1.sample_count)
    reports = {}
    for i, (a, b) in enumerate(ranges):
        name = f"group_{i}_{a}_{b}"
        reports[name] = run_single(config, rx1.slice(a, b), rx2.slice(a, b), out / name)
    return reports


def training_size_sweep(config: PipelineConfig, sizes, rx1: PowerTrace, rx2: PowerTrace):
    """Rates of both methods for several training lengths on one fixed data set.

    Training uses the first ``n`` declustered samples, testing the rest.
    """
    prep_full = prepare(config, rx1, rx2)
    rows = []
    for n in sizes:
        n = int(n)
        if not 0 < n < prep_full.x.n:
            raise ArgumentError(f"training size {n} outside (0, {prep_full.x.n})")
        prep = Prepared(rx1, rx2, prep_full.stationarity, prep_full.x, prep_full.y, prep_full.correlation,
                        prep_full.x.head(n), prep_full.y.head(n), prep_full.x.tail_from(n), prep_full.y.tail_from(n))
        model, _, _, _ = fit_model(config, prep, gates=False)
        decisions, outages = decide(config, model, prep)
        _, _, bdec, bout = compare_baseline(config, model, prep)
        for d, o, db, ob in zip(decisions, outages, bdec, bout):
            rows.append({"eps": d.target_eps, "n": n, "rate_mevt": d.rate_bits, "rate_baseline": db.rate_bits,
                         "outage_mevt": o.empirical_outage, "outage_baseline": ob.empirical_outage,
                         "baseline_underflow": db.eps_n_underflow})
    return rows


__all__ = ["PipelineConfig", "run_pipeline", "prepare", "fit_model", "decide", "intervals",
           "compare_baseline", "training_size_sweep", "load_traces"]
