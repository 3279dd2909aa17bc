"""Command-line interface.

Exit codes: 0 success, 2 input error, 3 gate stop, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import sys
import warnings
from pathlib import Path

from . import confidence as ci
from . import serialize, synth
from .bivariate import BgpdModel
from .errors import ArgumentError, GateStop, InputError, NumericalError, TailrateError
from .pipeline import (DEFAULT_EPS, PipelineConfig, compare_baseline, fit_model, load_traces, prepare,
                       run_pipeline, stage, tail_doc, training_size_sweep, write_figures,
                       write_threshold_curves)
from .rate import assess_outage, select_rate
from .tail_fit import threshold_diagnostics
from .trace import parse_groups, write_csv

EXIT_OK, EXIT_INPUT, EXIT_GATE, EXIT_NUMERICAL = 0, 2, 3, 4

_EPILOG = ("Training size: rates for a target error probability eps need roughly 1/eps "
           "(declustered) training samples; fewer make the joint tail too sparse.")


def _floats(text: str):
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def _ints(text: str):
    return [int(v) for v in _floats(text)]


# ------------------------------------------------------------------ parser

def _data_args(p, with_split=True):
    p.add_argument("--input", "-i", required=True, nargs="+", help="CSV file(s) with header timestamp,rx1,rx2")
    p.add_argument("--unit", choices=["mw", "dbm"], default="mw", help="unit of the power columns")
    p.add_argument("--cluster-size", type=int, default=1, help="keep the minimum of each block of this size")
    p.add_argument("--groups", default=None, help="stationary index ranges a:b,c:d (one report each)")
    p.add_argument("--adf-lag", type=int, default=None, help="ADF lag order (default: Schwert rule)")
    if with_split:
        p.add_argument("--train-fraction", type=float, default=0.5,
                       help="chronological share of the declustered samples used for training")


def _threshold_args(p):
    p.add_argument("--ux", type=float, default=None, help="explicit rx1 threshold in mW (overrides auto)")
    p.add_argument("--uy", type=float, default=None, help="explicit rx2 threshold in mW")
    p.add_argument("--pp-bound", type=float, default=0.05, help="largest PP deviation accepted")
    p.add_argument("--symmetric", action="store_true", help="fit a symmetric Beta(p, p) angular model")


def _eps_arg(p):
    p.add_argument("--eps", type=_floats, default=list(DEFAULT_EPS),
                   help="comma-separated target error probabilities (default 1e-3,1e-4,1e-5)")


def _ci_args(p):
    p.add_argument("--alpha", type=_floats, default=[0.05], help="comma-separated significance levels")
    p.add_argument("--bootstrap", "-B", type=int, default=1000, help="bootstrap rounds")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1, help="worker cap for resampling")
    p.add_argument("--jackknife", choices=["loo", "first_j"], default="loo",
                   help="jackknife scheme for the acceleration")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tailrate", epilog=_EPILOG,
                                     description="Joint lower-tail modeling of two received-power channels "
                                                 "and rate selection for a target error probability.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic two-channel trace", epilog=_EPILOG)
    p.add_argument("--output", "-o", required=True)
    p.add_argument("--spec", default=None, help="JSON file with a synthetic spec (flags are ignored)")
    p.add_argument("--n", type=int, default=100_000, help="number of instants")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--family", choices=list(synth.MARGIN_FAMILIES), default="gpd_gauss")
    p.add_argument("--dependence", choices=list(synth.DEPENDENCE_KINDS), default="logistic")
    p.add_argument("--param", type=float, default=0.8, help="logistic theta or Gaussian rho")
    p.add_argument("--mu", type=float, default=1.0)
    p.add_argument("--s", type=float, default=0.15)
    p.add_argument("--zeta", type=float, default=0.05)
    p.add_argument("--sigma", type=float, default=0.15)
    p.add_argument("--xi", type=float, default=-0.2)
    p.add_argument("--unit", choices=["mw", "dbm"], default="mw")
    p.add_argument("--save-spec", default=None, help="also write the spec as JSON")

    p = sub.add_parser("diagnose", help="stationarity, correlation and threshold diagnostics", epilog=_EPILOG)
    _data_args(p)
    p.add_argument("--output", "-o", required=True, help="output directory")

    p = sub.add_parser("fit", help="fit both tails and the joint model; write the model JSON", epilog=_EPILOG)
    _data_args(p)
    _threshold_args(p)
    p.add_argument("--output", "-o", required=True, help="model JSON path")
    p.add_argument("--report-dir", default=None, help="also write diagnostics and figures here")

    p = sub.add_parser("rate", help="rate for each eps from a fitted model", epilog=_EPILOG)
    p.add_argument("--model", "-m", required=True)
    _eps_arg(p)
    p.add_argument("--sweep", default=None, help="append one row per eps to this CSV")

    p = sub.add_parser("outage", help="empirical outage on the held-out part of the input", epilog=_EPILOG)
    p.add_argument("--model", "-m", required=True)
    _data_args(p)
    _eps_arg(p)
    p.add_argument("--sweep", default=None, help="append one row per eps to this CSV")

    p = sub.add_parser("ci", help="BCa intervals for the tail parameters and the rate", epilog=_EPILOG)
    p.add_argument("--model", "-m", required=True)
    _data_args(p)
    _eps_arg(p)
    _ci_args(p)
    p.add_argument("--full-bootstrap", action="store_true",
                   help="also refit the whole joint model on resampled instants (slow cross-check)")

    p = sub.add_parser("baseline", help="rate from whole-sample parametric margins", epilog=_EPILOG)
    p.add_argument("--model", "-m", required=True)
    _data_args(p)
    _eps_arg(p)
    p.add_argument("--bulk-quantile", type=float, default=None,
                   help="fit a truncated Gaussian above this quantile instead of the AIC choice")
    p.add_argument("--sweep", default=None, help="append one row per eps to this CSV")

    p = sub.add_parser("compare", help="CSV of tail-model vs baseline rates and outages", epilog=_EPILOG)
    _data_args(p)
    _threshold_args(p)
    _eps_arg(p)
    p.add_argument("--n-list", type=_ints, default=None,
                   help="training sizes to sweep (first n declustered samples train)")
    p.add_argument("--bulk-quantile", type=float, default=None)
    p.add_argument("--output", "-o", required=True, help="CSV path")

    p = sub.add_parser("run", help="full pipeline with every stage's artifacts", epilog=_EPILOG)
    _data_args(p)
    _threshold_args(p)
    _eps_arg(p)
    _ci_args(p)
    p.add_argument("--bulk-quantile", type=float, default=None)
    p.add_argument("--no-ci", action="store_true")
    p.add_argument("--no-figures", action="store_true")
    p.add_argument("--output", "-o", required=True, help="output directory")
    return parser


# ------------------------------------------------------------------ commands

def _config(args, **extra) -> PipelineConfig:
    kw = dict(inputs=args.input, unit=args.unit, cluster_size=args.cluster_size, groups=args.groups,
              adf_lag=args.adf_lag)
    for name in ("train_fraction", "ux", "uy", "pp_bound", "symmetric", "bulk_quantile"):
        if hasattr(args, name):
            kw[name] = getattr(args, name)
    if hasattr(args, "eps"):
        kw["eps_list"] = tuple(args.eps)
    if hasattr(args, "alpha"):
        kw.update(alpha_list=tuple(args.alpha), bootstrap=args.bootstrap, seed=args.seed, threads=args.threads,
                  jackknife_mode=args.jackknife)
    kw.update(extra)
    return PipelineConfig(**kw)


def _emit(obj) -> None:
    sys.stdout.write(serialize.dumps(obj) + "\n")


def _load_model(path) -> BgpdModel:
    with stage("ingest"):
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise InputError(f"cannot read model {path}: {exc.strerror}") from exc
        try:
            return BgpdModel.from_json(text)
        except (KeyError, TypeError, ValueError) as exc:
            raise InputError(f"{path} is not a model document: {exc}") from exc


def _append_sweep(path, header, rows) -> None:
    if path:
        serialize.write_csv(path, header, rows, append=True)


def _single_range(config: PipelineConfig, rx1, rx2):
    if config.groups:
        ranges = parse_groups(config.groups, rx1.sample_count)
        if len(ranges) != 1:
            raise ArgumentError("this subcommand accepts a single group range")
        a, b = ranges[0]
        return rx1.slice(a, b), rx2.slice(a, b)
    return rx1, rx2


def cmd_synth(args) -> int:
    if args.spec:
        try:
            spec = synth.SynthSpec.from_dict(serialize.read_json(args.spec))
        except OSError as exc:
            raise InputError(f"cannot read spec {args.spec}: {exc.strerror}") from exc
    else:
        margin = synth.MarginSpec(args.family, args.mu, args.s, args.zeta, args.sigma, args.xi)
        spec = synth.SynthSpec(margin, margin, synth.DependenceSpec(args.dependence, args.param), args.n, args.seed)
    rx1, rx2 = synth.generate(spec)
    write_csv(args.output, rx1, rx2, unit=args.unit)
    if args.save_spec:
        serialize.write_json(args.save_spec, spec.to_dict())
    _emit({"output": str(args.output), "n_total": spec.n_total, "seed": spec.seed,
           "threshold_x": spec.margin_x.threshold, "threshold_y": spec.margin_y.threshold})
    return EXIT_OK


def cmd_diagnose(args) -> int:
    config = _config(args)
    rx1, rx2 = _single_range(config, *load_traces(config))
    prep = prepare(config, rx1, rx2, gates=False)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        diags = {"rx1": threshold_diagnostics(prep.x_train), "rx2": threshold_diagnostics(prep.y_train)}
    write_threshold_curves(out, diags)
    from .plotting import plot_mrl, plot_stability
    plot_mrl({k: (d.mrl_curve, d.mrl_suggested_u) for k, d in diags.items()}, out / "mrl.png")
    plot_stability({k: (d.stability_curves, d.stability_suggested_u) for k, d in diags.items()},
                   out / "stability.png")
    c = prep.correlation
    doc = {"stationarity": prep.stationarity,
           "correlation": {"coefficient": c.coefficient, "tail_coefficient": c.tail_coefficient,
                           "tail_count": c.tail_count, "verdict": c.verdict.value},
           "decluster": {"cluster_size": prep.x.cluster_size, "lag1_autocorr_rx1": prep.x.lag1_autocorr,
                         "lag1_autocorr_rx2": prep.y.lag1_autocorr, "independent": prep.x.independent and
                         prep.y.independent},
           "thresholds": {k: {"suggested_u": d.suggested_u, "mrl_suggested_u": d.mrl_suggested_u,
                              "stability_suggested_u": d.stability_suggested_u} for k, d in diags.items()}}
    serialize.write_json(out / "diagnose.json", doc)
    _emit(doc)
    return EXIT_OK


def cmd_fit(args) -> int:
    config = _config(args)
    rx1, rx2 = _single_range(config, *load_traces(config))
    prep = prepare(config, rx1, rx2)
    model, chosen, diags, fits = fit_model(config, prep)
    Path(args.output).parent.mkdir(parents=True, exist_ok=True)
    Path(args.output).write_text(model.to_json() + "\n", encoding="utf-8")
    if args.report_dir:
        out = Path(args.report_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_threshold_curves(out, diags)
        write_figures(out, diags, fits, model, [])
    _emit({"model": str(args.output), "model_ref": model.ref(), "thresholds": chosen,
           "rx1": tail_doc(model.tail_x, fits["rx1"]), "rx2": tail_doc(model.tail_y, fits["rx2"]),
           "angular": {"p": model.angular.beta.p, "q": model.angular.beta.q}, "max_r": model.max_r})
    return EXIT_OK


_RATE_HEADER = ["eps", "eps_n", "argument_a", "angular_quantile", "rate_bits", "model_ref"]


def cmd_rate(args) -> int:
    model = _load_model(args.model)
    with stage("select_rate"):
        decisions = [select_rate(model, e) for e in args.eps]
    _append_sweep(args.sweep, _RATE_HEADER, [[d.target_eps, d.eps_n, d.argument_a, d.angular_quantile,
                                              d.rate_bits, d.model_ref] for d in decisions])
    _emit(decisions[0].to_dict() if len(decisions) == 1 else [d.to_dict() for d in decisions])
    return EXIT_OK


def _held_out(args, model):
    config = _config(args)
    rx1, rx2 = _single_range(config, *load_traces(config))
    return config, prepare(config, rx1, rx2, gates=False)


def cmd_outage(args) -> int:
    model = _load_model(args.model)
    _, prep = _held_out(args, model)
    reports = []
    for e in args.eps:
        with stage("select_rate"):
            d = select_rate(model, e)
        with stage("assess_outage"):
            reports.append(assess_outage(d, prep.x_test, prep.y_test, model))
    _append_sweep(args.sweep, ["eps", "rate_bits", "empirical_outage", "violations", "n_test", "satisfied"],
                  [[o.target_eps, o.rate_bits, o.empirical_outage, o.violations, o.n_test, o.satisfied]
                   for o in reports])
    _emit(reports[0].to_dict() if len(reports) == 1 else [o.to_dict() for o in reports])
    return EXIT_OK


def cmd_ci(args) -> int:
    model = _load_model(args.model)
    config, prep = _held_out(args, model)
    out = []
    with stage("confidence"):
        boots = ci.resample_tails(model, prep.x_train, prep.y_train, args.bootstrap, args.seed, args.threads,
                                  args.jackknife)
        for alpha in args.alpha:
            for e in args.eps:
                d = select_rate(model, e)
                iv = ci.rate_interval(model, d, prep.x_train, prep.y_train, alpha, args.bootstrap, args.seed,
                                      boots=boots)
                row = dict(eps=e, **iv.to_dict())
                if args.full_bootstrap:
                    fb = ci.full_bootstrap_rate_interval(model, d, prep.x_train, prep.y_train, alpha,
                                                         args.bootstrap, args.seed)
                    row["full_bootstrap"] = {"rate_lower": fb.rate_lower, "rate_upper": fb.rate_upper}
                out.append(row)
    _emit(out[0] if len(out) == 1 else out)
    return EXIT_OK


def cmd_baseline(args) -> int:
    model = _load_model(args.model)
    config, prep = _held_out(args, model)
    config.eps_list = tuple(args.eps)
    bmodel, cands, decisions, outages = compare_baseline(config, model, prep)
    _append_sweep(args.sweep, _RATE_HEADER + ["eps_n_underflow"],
                  [[d.target_eps, d.eps_n, d.argument_a, d.angular_quantile, d.rate_bits, d.model_ref,
                    d.eps_n_underflow] for d in decisions])
    _emit({"model": bmodel.to_dict(), "decisions": [d.to_dict() for d in decisions],
           "outage": [o.to_dict() for o in outages]})
    return EXIT_OK


_COMPARE_HEADER = ["eps", "n", "rate_mevt", "rate_baseline", "outage_mevt", "outage_baseline"]


def cmd_compare(args) -> int:
    config = _config(args)
    rx1, rx2 = _single_range(config, *load_traces(config))
    if args.n_list:
        rows = training_size_sweep(config, args.n_list, rx1, rx2)
    else:
        prep = prepare(config, rx1, rx2)
        model, _, _, _ = fit_model(config, prep)
        from .pipeline import decide
        decisions, outages = decide(config, model, prep)
        _, _, bdec, bout = compare_baseline(config, model, prep)
        rows = [{"eps": d.target_eps, "n": prep.x_train.n, "rate_mevt": d.rate_bits, "rate_baseline": db.rate_bits,
                 "outage_mevt": o.empirical_outage, "outage_baseline": ob.empirical_outage}
                for d, o, db, ob in zip(decisions, outages, bdec, bout)]
    serialize.write_csv(args.output, _COMPARE_HEADER, [[r[k] for k in _COMPARE_HEADER] for r in rows])
    _emit(rows)
    return EXIT_OK


def cmd_run(args) -> int:
    config = _config(args, output_dir=args.output, with_ci=not args.no_ci, figures=not args.no_figures)
    report = run_pipeline(config)
    _emit(report)
    return EXIT_OK


COMMANDS = {"synth": cmd_synth, "diagnose": cmd_diagnose, "fit": cmd_fit, "rate": cmd_rate,
            "outage": cmd_outage, "ci": cmd_ci, "baseline": cmd_baseline, "compare": cmd_compare,
            "run": cmd_run}


def exit_code(exc: BaseException) -> int:
    if isinstance(exc, GateStop):
        return EXIT_GATE
    if isinstance(exc, InputError):
        return EXIT_INPUT
    if isinstance(exc, NumericalError):
        return EXIT_NUMERICAL
    return 1


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse usage errors are input errors
        return EXIT_INPUT if exc.code not in (0, None) else EXIT_OK
    try:
        return COMMANDS[args.command](args)
    except TailrateError as exc:
        where = getattr(exc, "stage", None)
        msg = f"error{f' in stage {where}' if where else ''}: {exc}"
        hint = getattr(exc, "hint", "")
        if hint:
            msg += f"\nhint: {hint}"
        print(msg, file=sys.stderr)
        return exit_code(exc)


if __name__ == "__main__":
    sys.exit(main())
