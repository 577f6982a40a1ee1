"""Monte Carlo study harness.

Runs replicate trials of a scenario, fits the requested vaccine-effect
models to each, and aggregates bias, empirical variance and 95% coverage
of the linear predictor and its change from s = 0, plus intercept and
linear-trend summaries and crossover statistics (trigger day tau_x and
case count N_x).

Replicate ``r`` is seeded by ``rng.replicate_seed(base_seed, r)``, so a
study is a pure function of its spec at any worker count; aggregation is
keyed on the replicate index.  Replicates whose fit fails or does not
converge are excluded from that model's aggregates and counted.
"""

import csv
import math
import multiprocessing
import warnings
from dataclasses import dataclass, replace

import numpy as np

from . import coxph, inference, pspline
from .hazards import DAYS_PER_YEAR, ConstantVE, LogLinearVE
from .rng import replicate_seed
from .simulate import simulate_trial
from .trialdata import records_to_arrays, reshape_arrays

Z95 = inference.Z95


@dataclass(frozen=True)
class ModelRequest:
    """One model to fit per replicate."""

    kind: str  # "constant" | "loglinear" | "pspline"
    slope_scale: float = DAYS_PER_YEAR
    n_terms: int = 8
    target_df: float | None = 3.1
    lam: float | None = None

    def __post_init__(self):
        if self.kind not in ("constant", "loglinear", "pspline"):
            raise ValueError(f"unknown model kind {self.kind!r}")


@dataclass(frozen=True)
class StudySpec:
    """Scenario, replication, models and evaluation grid for one study."""

    scenario: object
    n_replicates: int
    models: tuple = (ModelRequest("loglinear"),)
    eval_times_years: tuple = (0.5, 1.0, 1.5, 2.0)
    base_seed: int = 0
    analysis_day: float | None = None
    time_axis: str = "calendar"  # "calendar" | "entry" (align on study entry)
    frailty_summaries: bool = False
    stratify_crossover: bool = False
    ties: str = "breslow"

    def __post_init__(self):
        if self.n_replicates < 1:
            raise ValueError("n_replicates must be >= 1")
        if self.time_axis not in ("calendar", "entry"):
            raise ValueError("time_axis must be 'calendar' or 'entry'")


@dataclass
class MetricsCell:
    model: str
    s_years: float
    bias: float
    emp_var: float
    coverage: float
    change_bias: float
    change_var: float
    change_coverage: float
    n_used: int


@dataclass
class ParamMetrics:
    model: str
    name: str  # "intercept" | "trend"
    truth: float
    bias: float
    emp_var: float
    coverage: float
    n_used: int


@dataclass
class StudyResult:
    spec: StudySpec
    cells: list
    params: list
    n_excluded: dict
    tau_x_mean: float
    tau_x_sd: float
    n_x_mean: float
    n_x_sd: float
    lrt_p: dict
    frailty: dict | None = None
    warning: str | None = None
    replicates: list | None = None

    def cell(self, model, s_years):
        for c in self.cells:
            if c.model == model and math.isclose(c.s_years, s_years):
                return c
        raise KeyError(f"no cell for ({model}, {s_years})")

    def param(self, model, name):
        for p in self.params:
            if p.model == model and p.name == name:
                return p
        raise KeyError(f"no parameter row for ({model}, {name})")

    def to_csv(self, fh_or_path):
        def _write(fh):
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["model", "quantity", "s_years", "truth", "bias",
                        "emp_var", "coverage", "n_used"])
            for c in self.cells:
                w.writerow([c.model, "linear_predictor", c.s_years, "",
                            _fmt(c.bias), _fmt(c.emp_var), _fmt(c.coverage),
                            c.n_used])
                w.writerow([c.model, "change_from_zero", c.s_years, "",
                            _fmt(c.change_bias), _fmt(c.change_var),
                            _fmt(c.change_coverage), c.n_used])
            for p in self.params:
                w.writerow([p.model, p.name, "", _fmt(p.truth), _fmt(p.bias),
                            _fmt(p.emp_var), _fmt(p.coverage), p.n_used])
            w.writerow(["", "tau_x", "", "", _fmt(self.tau_x_mean),
                        _fmt(self.tau_x_sd), "", ""])
            w.writerow(["", "n_x", "", "", _fmt(self.n_x_mean),
                        _fmt(self.n_x_sd), "", ""])

        if hasattr(fh_or_path, "write"):
            _write(fh_or_path)
        else:
            with open(fh_or_path, "w", newline="", encoding="utf-8") as fh:
                _write(fh)

    def to_markdown(self):
        lines = []
        if self.warning:
            lines.append(f"**WARNING: {self.warning}**")
            lines.append("")
        lines.append("| model | time (yr) | bias | emp. var. | covg. "
                      "| change bias | change var. | change covg. |")
        lines.append("|---|---|---|---|---|---|---|---|")
        for c in self.cells:
            lines.append(
                f"| {c.model} | {c.s_years:g} | {c.bias:.3f} | {c.emp_var:.3f} "
                f"| {c.coverage:.3f} | {c.change_bias:.3f} "
                f"| {c.change_var:.3f} | {c.change_coverage:.3f} |")
        lines.append("")
        lines.append("| model | parameter | bias | emp. var. | covg. |")
        lines.append("|---|---|---|---|---|")
        for p in self.params:
            lines.append(f"| {p.model} | {p.name} | {p.bias:.3f} "
                         f"| {p.emp_var:.3f} | {p.coverage:.3f} |")
        if not math.isnan(self.tau_x_mean) or not math.isnan(self.n_x_mean):
            lines.append("")
            lines.append(f"Crossover: tau_x = {self.tau_x_mean / DAYS_PER_YEAR:.2f} "
                         f"+/- {self.tau_x_sd / DAYS_PER_YEAR:.2f} yr, "
                         f"N_x = {self.n_x_mean:.1f} +/- {self.n_x_sd:.1f}")
        excl = {k: v for k, v in self.n_excluded.items() if v}
        if excl:
            lines.append("")
            lines.append(f"Excluded non-converged replicates: {excl}")
        return "\n".join(lines) + "\n"


def _fmt(x):
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return "nan"
    return repr(float(x))


def _truth_values(profile, s_days):
    f_true = np.atleast_1d(profile.linear_predictor(s_days))
    intercept = float(profile.linear_predictor(0.0))
    if isinstance(profile, LogLinearVE):
        trend = float(profile.slope_per_year)
    elif isinstance(profile, ConstantVE):
        trend = 0.0
    else:
        trend = math.nan
    return f_true, intercept, trend


def _entry_aligned(data, cols):
    entry_of = cols["entry"][data.id - 1]
    return replace(data, tstart=data.tstart - entry_of,
                   tstop=data.tstop - entry_of,
                   vacc_time=data.vacc_time - entry_of)


def _fit_one(spec, req, data, work, constant_fit):
    """Fit one requested model; returns the per-replicate summary dict."""
    out = {"converged": False}
    s_days = np.asarray(spec.eval_times_years, dtype=float) * DAYS_PER_YEAR
    try:
        if req.kind == "constant":
            fit = constant_fit
        elif req.kind == "loglinear":
            fit = coxph.fit(data, coxph.LogLinearModel(req.slope_scale),
                            ties=spec.ties, work=work)
        else:
            fit = pspline.fit_pspline(data, n_terms=req.n_terms,
                                      lam=req.lam, target_df=req.target_df,
                                      ties=spec.ties, work=work)
    except (coxph.SingularModelError, coxph.NonFiniteLinearPredictor,
            coxph.NoEventsError, ValueError):
        return out
    if fit is None or not fit.converged:
        return out

    out["converged"] = True
    curve = inference.ve_curve(fit, s_days)
    out["f"] = curve.linear_predictor
    out["f_se"] = curve.se
    changes = [inference.ve_change(fit, s) for s in s_days]
    out["change"] = np.array([c[0] for c in changes])
    out["change_se"] = np.array([c[1] for c in changes])

    at0 = inference.ve_curve(fit, np.array([0.0]))
    out["intercept"] = float(at0.linear_predictor[0])
    out["intercept_se"] = float(at0.se[0])
    if req.kind == "loglinear":
        out["trend"] = float(fit.params[1]) * (req.slope_scale / DAYS_PER_YEAR)
        out["trend_se"] = float(np.sqrt(fit.cov[1, 1])) * (req.slope_scale
                                                           / DAYS_PER_YEAR)
    elif req.kind == "pspline":
        trend, trend_se = inference.spline_linear_trend(fit)
        out["trend"] = trend
        out["trend_se"] = trend_se
        out["eff_df"] = fit.eff_df

    if req.kind != "constant" and constant_fit is not None \
            and constant_fit.converged:
        try:
            out["lrt_p"] = inference.lrt_time_varying(fit, constant_fit).p_value
        except ValueError:
            pass
    return out


def run_replicate(spec, r):
    """Simulate, reshape and fit one replicate (worker function)."""
    seed = replicate_seed(spec.base_seed, r)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        records, meta = simulate_trial(spec.scenario, seed)
        cols = records_to_arrays(records)
        data = reshape_arrays(cols, spec.stratify_crossover)
    if spec.analysis_day is not None:
        data = data.censored_at(spec.analysis_day)
    if spec.time_axis == "entry":
        data = _entry_aligned(data, cols)

    result = {
        "replicate": r,
        "tau_x": meta["trigger_day"] if meta["trigger_day"] is not None
        else math.nan,
        "n_x": meta["cases_at_trigger"] if meta["cases_at_trigger"] is not None
        else math.nan,
        "frailty": meta.get("frailty_summary"),
        "models": {},
    }
    try:
        work = coxph._CoxWork(data)
        constant_fit = coxph.fit(data, coxph.ConstantModel(), ties=spec.ties,
                                 work=work)
    except (coxph.NoEventsError, coxph.SingularModelError,
            coxph.NonFiniteLinearPredictor):
        work = None
        constant_fit = None
    for req in spec.models:
        if work is None:
            result["models"][req.kind] = {"converged": False}
        else:
            result["models"][req.kind] = _fit_one(spec, req, data, work,
                                                  constant_fit)
    return result


def _aggregate(spec, reps, keep_replicates):
    s_years = np.asarray(spec.eval_times_years, dtype=float)
    s_days = s_years * DAYS_PER_YEAR
    f_true, intercept_true, trend_true = _truth_values(
        spec.scenario.true_profile, s_days)
    change_true = f_true - intercept_true

    cells, params, n_excluded, lrt_p = [], [], {}, {}
    for req in spec.models:
        name = req.kind
        rows = [r["models"][name] for r in reps]
        ok = [row for row in rows if row.get("converged")]
        n_excluded[name] = len(rows) - len(ok)
        lrt_p[name] = np.array([row.get("lrt_p", math.nan) for row in rows])
        if not ok:
            continue
        f = np.array([row["f"] for row in ok])
        se = np.array([row["f_se"] for row in ok])
        ch = np.array([row["change"] for row in ok])
        ch_se = np.array([row["change_se"] for row in ok])
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")  # ddof=1 with one replicate -> nan
            for k, s in enumerate(s_years):
                cover = np.abs(f[:, k] - f_true[k]) <= Z95 * se[:, k]
                ch_cover = np.abs(ch[:, k] - change_true[k]) <= Z95 * ch_se[:, k]
                cells.append(MetricsCell(
                    model=name, s_years=float(s),
                    bias=float(np.mean(f[:, k]) - f_true[k]),
                    emp_var=float(np.var(f[:, k], ddof=1)),
                    coverage=float(np.mean(cover)),
                    change_bias=float(np.mean(ch[:, k]) - change_true[k]),
                    change_var=float(np.var(ch[:, k], ddof=1)),
                    change_coverage=float(np.mean(ch_cover)),
                    n_used=len(ok)))
            icept = np.array([row["intercept"] for row in ok])
            icept_se = np.array([row["intercept_se"] for row in ok])
            params.append(ParamMetrics(
                model=name, name="intercept", truth=intercept_true,
                bias=float(np.mean(icept) - intercept_true),
                emp_var=float(np.var(icept, ddof=1)),
                coverage=float(np.mean(np.abs(icept - intercept_true)
                                       <= Z95 * icept_se)),
                n_used=len(ok)))
            if name != "constant":
                tr = np.array([row["trend"] for row in ok])
                tr_se = np.array([row["trend_se"] for row in ok])
                params.append(ParamMetrics(
                    model=name, name="trend", truth=trend_true,
                    bias=float(np.mean(tr) - trend_true),
                    emp_var=float(np.var(tr, ddof=1)),
                    coverage=float(np.mean(np.abs(tr - trend_true)
                                           <= Z95 * tr_se)),
                    n_used=len(ok)))

    tau = np.array([r["tau_x"] for r in reps], dtype=float)
    nx = np.array([r["n_x"] for r in reps], dtype=float)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        tau_mean = float(np.nanmean(tau)) if np.isfinite(tau).any() else math.nan
        tau_sd = float(np.nanstd(tau, ddof=1)) if np.isfinite(tau).any() else math.nan
        nx_mean = float(np.nanmean(nx)) if np.isfinite(nx).any() else math.nan
        nx_sd = float(np.nanstd(nx, ddof=1)) if np.isfinite(nx).any() else math.nan

    frailty = None
    if spec.frailty_summaries:
        frailty = _frailty_geomeans([r["frailty"] for r in reps])

    warning = None
    worst = max(n_excluded.values(), default=0)
    if spec.n_replicates == 1:
        warning = ("single replicate: variance and coverage columns are "
                   "unavailable (reported as nan)")
    elif worst > 0.05 * spec.n_replicates:
        warning = (f"{worst} of {spec.n_replicates} replicates excluded for "
                   f"non-convergence (> 5%); aggregates may be unreliable")

    return StudyResult(
        spec=spec, cells=cells, params=params, n_excluded=n_excluded,
        tau_x_mean=tau_mean, tau_x_sd=tau_sd, n_x_mean=nx_mean, n_x_sd=nx_sd,
        lrt_p=lrt_p, frailty=frailty, warning=warning,
        replicates=reps if keep_replicates else None)


def _frailty_geomeans(summaries):
    """Geometric means of survivor-frailty summary statistics across replicates."""
    out = {}
    for arm in ("placebo", "vaccine"):
        stats = {}
        for key in ("mean", "sd", "q25", "q50", "q75"):
            vals = np.array([s[arm][key] for s in summaries if s is not None])
            stats[key] = float(np.exp(np.mean(np.log(np.maximum(vals, 1e-300)))))
        out[arm] = stats
    return out


def _worker(args):
    spec, r = args
    return run_replicate(spec, r)


def run_study(spec, jobs=1, keep_replicates=False):
    """Run all replicates and aggregate; identical output at any ``jobs``."""
    tasks = [(spec, r) for r in range(spec.n_replicates)]
    if jobs > 1 and spec.n_replicates > 1:
        ctx = multiprocessing.get_context("fork")
        chunk = max(1, spec.n_replicates // (jobs * 8))
        with ctx.Pool(jobs) as pool:
            reps = pool.map(_worker, tasks, chunksize=chunk)
    else:
        reps = [_worker(t) for t in tasks]
    reps.sort(key=lambda r: r["replicate"])
    return _aggregate(spec, reps, keep_replicates)


def frailty_study(spec, jobs=1, keep_replicates=False):
    """Study with survivor-frailty summaries aggregated as geometric means."""
    if not spec.frailty_summaries:
        spec = replace(spec, frailty_summaries=True)
    if spec.scenario.frailty.variance <= 0:
        raise ValueError("frailty_study needs a scenario with frailty variance > 0")
    return run_study(spec, jobs=jobs, keep_replicates=keep_replicates)


@dataclass
class DesignComparison:
    """Pairwise empirical-variance ratios across studies on a common grid."""

    names: tuple
    s_years: tuple
    ratios: dict  # (name_a, name_b, model, s) -> var_a / var_b

    def ratio(self, name_a, name_b, model, s_years):
        return self.ratios[(name_a, name_b, model, float(s_years))]

    def to_markdown(self):
        lines = ["| design A | design B | model | time (yr) | var A / var B |",
                 "|---|---|---|---|---|"]
        for (a, b, model, s), v in self.ratios.items():
            lines.append(f"| {a} | {b} | {model} | {s:g} | {v:.3f} |")
        return "\n".join(lines) + "\n"


def compare_designs(named_results):
    """Empirical-variance ratios at each evaluation time, pairwise.

    ``named_results`` is a list of (name, StudyResult); all results must
    share the evaluation grid.
    """
    if len(named_results) < 2:
        raise ValueError("need at least two studies to compare")
    names = tuple(name for name, _ in named_results)
    grids = {tuple(res.spec.eval_times_years) for _, res in named_results}
    if len(grids) != 1:
        raise ValueError(f"evaluation grids differ across studies: {grids}")
    s_years = grids.pop()
    ratios = {}
    for i, (na, ra) in enumerate(named_results):
        for nb, rb in named_results:
            if nb == na:
                continue
            models = {c.model for c in ra.cells} & {c.model for c in rb.cells}
            for model in sorted(models):
                for s in s_years:
                    ratios[(na, nb, model, float(s))] = (
                        ra.cell(model, s).emp_var / rb.cell(model, s).emp_var)
    return DesignComparison(names=names, s_years=s_years, ratios=ratios)
