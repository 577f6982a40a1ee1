"""Command-line interface.

Subcommands tie the pipeline together: ``reshape`` wide records into risk
intervals, ``simulate`` a trial from a scenario config, ``fit`` a decay
model to a long-format file, and ``study`` a Monte Carlo reproduction.

Every command is a pure function of its inputs, config and seed; repeated
invocations produce byte-identical outputs at any worker count.  Errors go
to stderr; exit codes are 0 (ok), 2 (input or configuration error) and
3 (numerical failure, results still written and flagged).
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from . import coxph, inference, pspline, trialdata
from ._kernels import active_backend
from .hazards import DAYS_PER_YEAR
from .study import compare_designs, run_study  # noqa: F401  (library surface)

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERIC = 3


class CliError(Exception):
    def __init__(self, message, code=EXIT_INPUT):
        super().__init__(message)
        self.code = code


def _load_config(args):
    doc = cfgmod.load_document(args.config) if args.config else {}
    cfgmod.apply_overrides(doc, args.override or [])
    return cfgmod.from_dict(doc)


def _out_stream(path):
    return sys.stdout if path == "-" else open(path, "w", newline="",
                                               encoding="utf-8")


def cmd_reshape(args):
    try:
        records = trialdata.read_records(args.infile)
    except (trialdata.SchemaError, OSError) as exc:
        raise CliError(f"cannot read {args.infile}: {exc}") from exc
    if not records:
        raise CliError("no records in input")
    try:
        trialdata.validate(records)
    except trialdata.ValidationError as exc:
        for rid, msg in exc.problems:
            print(f"id={rid}: {msg}", file=sys.stderr)
        raise CliError(f"{len(exc.problems)} invalid record(s)") from exc
    intervals = trialdata.reshape_counting_process(
        records, stratify_crossover=args.stratify_crossover)
    stream = _out_stream(args.out)
    try:
        trialdata.write_intervals(intervals, stream)
    finally:
        if stream is not sys.stdout:
            stream.close()
    return EXIT_OK


def cmd_simulate(args):
    cfg = _load_config(args)
    try:
        scenario = cfgmod.build_scenario(cfg)
    except cfgmod.ConfigError as exc:
        raise CliError(str(exc)) from exc
    from .simulate import simulate_trial

    records, meta = simulate_trial(scenario,
                                   seed=args.seed if args.seed is not None
                                   else None)
    trialdata.write_records(records, args.out)
    sidecar = Path(args.out).with_suffix(".meta.json")
    sidecar.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n",
                       encoding="utf-8")
    print(f"wrote {len(records)} records to {args.out} "
          f"(metadata: {sidecar})")
    return EXIT_OK


def _parse_grid(text):
    parts = text.split(":")
    if len(parts) != 3:
        raise CliError(f"--ve-grid expects start:stop:step, got {text!r}")
    try:
        start, stop, step = (float(p) for p in parts)
    except ValueError:
        raise CliError(f"--ve-grid expects numbers, got {text!r}") from None
    if step <= 0 or stop < start or start < 0:
        raise CliError("--ve-grid needs 0 <= start <= stop and step > 0")
    return np.arange(start, stop + 0.5 * step, step)


def cmd_fit(args):
    cfg = _load_config(args)
    try:
        intervals = trialdata.read_intervals(args.infile)
    except (trialdata.SchemaError, OSError) as exc:
        raise CliError(f"cannot read {args.infile}: {exc}") from exc
    if not intervals:
        raise CliError("no intervals in input")
    data = trialdata.IntervalArrays.from_intervals(intervals)
    if not args.stratified:
        data.stratum = np.zeros_like(data.stratum)
    if args.at_day is not None:
        data = data.censored_at(args.at_day)

    model_name = args.model or cfg.fit.model
    slope_scale = DAYS_PER_YEAR if cfg.fit.slope_scale == "year" else 1.0
    target_df = args.target_df if args.target_df is not None else cfg.fit.target_df

    exit_code = EXIT_OK
    try:
        constant_fit = coxph.fit(data, coxph.ConstantModel(), ties=cfg.fit.ties)
        if model_name == "constant":
            fit = constant_fit
        elif model_name == "loglinear":
            fit = coxph.fit(data, coxph.LogLinearModel(slope_scale),
                            ties=cfg.fit.ties)
        elif model_name == "pspline":
            fit = pspline.fit_pspline(data, n_terms=cfg.fit.spline_terms,
                                      lam=cfg.fit.lam,
                                      target_df=None if cfg.fit.lam is not None
                                      else target_df,
                                      ties=cfg.fit.ties)
        else:
            raise CliError(f"unknown model {model_name!r}")
    except (coxph.NoEventsError, coxph.SingularModelError,
            coxph.NonFiniteLinearPredictor) as exc:
        raise CliError(f"fit failed: {exc}", code=EXIT_NUMERIC) from exc

    print(f"model: {model_name}   ties: {cfg.fit.ties}   "
          f"backend: {active_backend()}")
    print(f"intervals: {fit.n_intervals}   events: {fit.n_events}")
    if model_name == "pspline":
        coefs, cov, names = pspline.centered_coefficients(fit)
        print(f"penalty lambda: {fit.penalty_lambda:.6g}   "
              f"effective df: {fit.eff_df:.2f}")
        se = np.sqrt(np.maximum(np.diag(cov), 0.0))
        print(f"{'term':>12} {'estimate':>12} {'se':>10}")
        for name, est, s in zip(names, coefs, se):
            print(f"{name:>12} {est:>12.5f} {s:>10.5f}")
    else:
        print(fit.coef_table())
    if model_name == "loglinear":
        slope = fit.params[1]
        per_day = slope / slope_scale
        print(f"slope per day: {per_day:.5f}   slope per year: "
              f"{per_day * DAYS_PER_YEAR:.4f}")
    print(f"log partial likelihood: {fit.loglik:.6f}   "
          f"iterations: {fit.iterations}   converged: {fit.converged}")
    if not fit.converged:
        print("WARNING: fit did not converge; estimates are the last iterate",
              file=sys.stderr)
        exit_code = EXIT_NUMERIC

    if model_name != "constant" and fit.converged and constant_fit.converged:
        lrt = inference.lrt_time_varying(fit, constant_fit)
        print(f"LRT for time-varying VE vs constant: statistic "
              f"{lrt.statistic:.4f}, df {lrt.df:.2f}, p = {lrt.p_value:.4g}")

    if args.out_curve and fit.converged:
        curve = inference.ve_curve(fit, _parse_grid(args.ve_grid))
        curve.to_csv(args.out_curve)
        print(f"wrote VE curve to {args.out_curve}")
    return exit_code


def cmd_study(args):
    cfg = _load_config(args)
    if args.reps is not None:
        cfg.study.n_replicates = args.reps
    if cfg.study.n_replicates < 1:
        raise CliError("study needs at least 1 replicate")
    try:
        spec = cfgmod.build_study_spec(cfg)
    except cfgmod.ConfigError as exc:
        raise CliError(str(exc)) from exc

    result = run_study(spec, jobs=args.jobs)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    result.to_csv(outdir / "metrics.csv")
    (outdir / "metrics.md").write_text(result.to_markdown(), encoding="utf-8")
    if result.warning:
        print(f"WARNING: {result.warning}", file=sys.stderr)
    print(result.to_markdown())
    print(f"wrote {outdir / 'metrics.csv'} and {outdir / 'metrics.md'}")
    return EXIT_OK


def build_parser():
    epilog_lines = ["configuration keys (JSON sections, overridable with "
                    "--override key=value):"]
    epilog_lines += ["  " + line for line in cfgmod.describe()]
    try:
        epilog_lines.append("bundled scenarios: "
                            + ", ".join(cfgmod.bundled_names()))
    except Exception:
        pass
    parser = argparse.ArgumentParser(
        prog="vecross",
        description="Simulate and analyze vaccine trials with placebo "
                    "crossover; estimate time-varying vaccine efficacy.",
        epilog="\n".join(epilog_lines),
        formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("reshape", help="wide records -> counting-process CSV")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", default="-", help="output path or - for stdout")
    p.add_argument("--stratify-crossover", action="store_true",
                   help="assign post-blackout intervals to stratum 1")
    p.set_defaults(func=cmd_reshape)

    p = sub.add_parser("simulate", help="generate one trial from a scenario")
    p.add_argument("--config", help="config file or bundled scenario name")
    p.add_argument("--out", required=True, help="records CSV path")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--override", action="append", metavar="KEY=VALUE")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="fit a VE decay model to a long CSV")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--model", choices=["constant", "loglinear", "pspline"])
    p.add_argument("--target-df", type=float, default=None)
    p.add_argument("--ve-grid", default="0:730:7", metavar="START:STOP:STEP",
                   help="VE curve grid in days (default 0:730:7)")
    p.add_argument("--out-curve", help="write the VE curve CSV here")
    p.add_argument("--at-day", type=float, default=None,
                   help="censor all intervals at this day before fitting")
    p.add_argument("--stratified", action="store_true",
                   help="honor the stratum column")
    p.add_argument("--config", help="config file or bundled scenario name")
    p.add_argument("--override", action="append", metavar="KEY=VALUE")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("study", help="Monte Carlo study from a scenario config")
    p.add_argument("--config", help="config file or bundled scenario name")
    p.add_argument("--reps", type=int, default=None)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--override", action="append", metavar="KEY=VALUE")
    p.set_defaults(func=cmd_study)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except cfgmod.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
