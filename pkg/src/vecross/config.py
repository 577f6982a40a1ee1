"""Structured configuration for the CLI.

A configuration is a JSON document with sections ``design``, ``baseline``,
``truth``, ``frailty``, ``fit`` and ``study``.  Unknown keys are rejected;
every key has a default and can be overridden from the command line with
``--override section.key=value`` (values parsed as JSON, falling back to
strings).  Bundled example scenarios live in ``vecross/configs/`` and can
be referenced by name instead of a path.
"""

import dataclasses
import json
from dataclasses import dataclass, field
from importlib import resources

from .hazards import (DAYS_PER_YEAR, BaselineHazard, ConstantVE, LogLinearVE,
                      PiecewiseConstantVE)
from .simulate import (AtCases, AtTime, ContinuousUniform, FrailtySpec,
                       Parallel, Scenario, TrialDesign, calibrate_rates,
                       nominal_rates)
from .study import ModelRequest, StudySpec


class ConfigError(ValueError):
    """Invalid configuration document or override."""


@dataclass
class CrossoverConfig:
    policy: str = "parallel"
    threshold: int = 150
    day: float = 365.0
    interlude_days: float = 28.0
    start_day: float = 0.0
    end_day: float = 730.0
    count_arm: str = "all"


@dataclass
class DesignConfig:
    n_participants: int = 3000
    allocation: float = 0.5
    accrual_days: float = 90.0
    followup_days: float = 730.0
    dose_to_count_days: float = 0.0
    blackout_days: float = 30.0
    interlude_order: str = "uniform"
    dropout_rate: float = 0.0
    seed: int = 0
    crossover: CrossoverConfig = field(default_factory=CrossoverConfig)


@dataclass
class BaselineConfig:
    method: str = "nominal"  # nominal | expected | explicit
    targets: list = field(default_factory=lambda: [50.0, 75.0, 50.0, 25.0,
                                                   25.0, 37.5, 25.0, 12.5])
    period_days: float = 91.25
    changepoints: list = field(default_factory=list)
    rates: list = field(default_factory=list)


@dataclass
class TruthConfig:
    form: str = "constant"  # constant | loglinear | piecewise
    intercept: float = -1.3862943611198906  # VE(0) = 75%
    slope_per_year: float = 0.0
    log_hrs: list = field(default_factory=list)
    changepoints_days: list = field(default_factory=list)


@dataclass
class FrailtyConfig:
    variance: float = 0.0


@dataclass
class FitConfig:
    model: str = "loglinear"
    ties: str = "breslow"
    slope_scale: str = "year"  # year | day
    spline_terms: int = 8
    target_df: float = 3.1
    lam: float | None = None


@dataclass
class StudyConfig:
    n_replicates: int = 1000
    models: list = field(default_factory=lambda: ["constant", "loglinear"])
    eval_times_years: list = field(default_factory=lambda: [0.5, 1.0, 1.5, 2.0])
    base_seed: int = 20210101
    analysis_day: float | None = None


@dataclass
class Config:
    design: DesignConfig = field(default_factory=DesignConfig)
    baseline: BaselineConfig = field(default_factory=BaselineConfig)
    truth: TruthConfig = field(default_factory=TruthConfig)
    frailty: FrailtyConfig = field(default_factory=FrailtyConfig)
    fit: FitConfig = field(default_factory=FitConfig)
    study: StudyConfig = field(default_factory=StudyConfig)


_HELP = {
    "design.n_participants": "total enrollment",
    "design.allocation": "fraction randomized to vaccine",
    "design.accrual_days": "linear accrual window for first doses",
    "design.followup_days": "per-participant follow-up after counted entry",
    "design.dose_to_count_days": "lag from first dose to counted follow-up",
    "design.blackout_days": "uncounted window after a crossover dose",
    "design.interlude_order": "interlude assignment: uniform | enrollment | reverse-enrollment",
    "design.dropout_rate": "probability of uniform non-administrative censoring",
    "design.seed": "default trial seed (overridden by --seed)",
    "design.crossover.policy": "parallel | at_cases | at_time | continuous_uniform",
    "design.crossover.threshold": "case count triggering crossover (at_cases)",
    "design.crossover.day": "calendar day crossover starts (at_time)",
    "design.crossover.interlude_days": "length of the crossover interlude",
    "design.crossover.start_day": "window start (continuous_uniform)",
    "design.crossover.end_day": "window end (continuous_uniform)",
    "design.crossover.count_arm": "arm(s) counted toward the trigger: all | placebo",
    "baseline.method": "nominal | expected (calibrated) | explicit",
    "baseline.targets": "expected placebo cases per period (nominal/expected)",
    "baseline.period_days": "calibration period length in days",
    "baseline.changepoints": "explicit baseline changepoints (days)",
    "baseline.rates": "explicit per-day baseline rates (one more than changepoints)",
    "truth.form": "true decay shape: constant | loglinear | piecewise",
    "truth.intercept": "true log hazard ratio at vaccination",
    "truth.slope_per_year": "true per-year slope of the log hazard ratio",
    "truth.log_hrs": "piecewise log hazard ratios",
    "truth.changepoints_days": "piecewise changepoints (days since vaccination)",
    "frailty.variance": "gamma frailty variance (mean 1); 0 disables",
    "fit.model": "constant | loglinear | pspline",
    "fit.ties": "tie handling: breslow | efron",
    "fit.slope_scale": "slope denominator: year | day",
    "fit.spline_terms": "number of B-spline basis terms",
    "fit.target_df": "target effective degrees of freedom for spline fits",
    "fit.lam": "fixed spline penalty weight (overrides target_df)",
    "study.n_replicates": "Monte Carlo replicates",
    "study.models": "models fitted per replicate",
    "study.eval_times_years": "evaluation times since vaccination (years)",
    "study.base_seed": "study base seed; replicate seeds are derived from it",
    "study.analysis_day": "censor every replicate at this day before fitting",
}


def _coerce(current, value, path):
    if current is None or value is None:
        return value
    if dataclasses.is_dataclass(current):
        raise ConfigError(f"'{path}' is a section, not a value")
    if isinstance(current, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"'{path}' expects a boolean, got {value!r}")
        return value
    if isinstance(current, int) and not isinstance(current, bool):
        if isinstance(value, bool) or (isinstance(value, float)
                                       and not float(value).is_integer()):
            raise ConfigError(f"'{path}' expects an integer, got {value!r}")
        if not isinstance(value, (int, float)):
            raise ConfigError(f"'{path}' expects an integer, got {value!r}")
        return int(value)
    if isinstance(current, float):
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            raise ConfigError(f"'{path}' expects a number, got {value!r}")
        return float(value)
    if isinstance(current, str):
        if not isinstance(value, str):
            raise ConfigError(f"'{path}' expects a string, got {value!r}")
        return value
    if isinstance(current, list):
        if not isinstance(value, list):
            raise ConfigError(f"'{path}' expects a list, got {value!r}")
        return list(value)
    raise ConfigError(f"cannot interpret '{path}'")


def _fill(obj, d, path=""):
    names = {f.name for f in dataclasses.fields(obj)}
    unknown = sorted(set(d) - names)
    if unknown:
        where = path.rstrip(".") or "top level"
        raise ConfigError(f"unknown key(s) {unknown} at {where}")
    for key, value in d.items():
        current = getattr(obj, key)
        if dataclasses.is_dataclass(current) and not isinstance(current, type):
            if not isinstance(value, dict):
                raise ConfigError(f"section '{path}{key}' expects an object")
            _fill(current, value, f"{path}{key}.")
        else:
            setattr(obj, key, _coerce(current, value, f"{path}{key}"))
    return obj


def from_dict(d):
    """Parse a configuration document, rejecting unknown keys."""
    if not isinstance(d, dict):
        raise ConfigError("configuration must be a JSON object")
    return _fill(Config(), d)


def to_dict(cfg):
    return dataclasses.asdict(cfg)


def describe():
    """One line per configuration key: path, default, and meaning."""
    lines = []

    def walk(obj, path):
        for f in dataclasses.fields(obj):
            value = getattr(obj, f.name)
            key = f"{path}{f.name}"
            if dataclasses.is_dataclass(value) and not isinstance(value, type):
                walk(value, key + ".")
            else:
                help_text = _HELP.get(key, "")
                lines.append(f"{key} (default {json.dumps(value)}): {help_text}")

    walk(Config(), "")
    return lines


def apply_overrides(doc, overrides):
    """Apply ``section.key=value`` strings onto a config document (dict)."""
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        parts = key.strip().split(".")
        node = doc
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {item!r} descends into a value")
        node[parts[-1]] = value
    return doc


def bundled_names():
    base = resources.files("vecross") / "configs"
    return sorted(p.name[:-5] for p in base.iterdir() if p.name.endswith(".json"))


def load_document(path_or_name):
    """Load a config document from a file path or a bundled scenario name."""
    try:
        with open(path_or_name, encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError:
        pass
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON in {path_or_name}: {exc}") from None
    base = resources.files("vecross") / "configs" / f"{path_or_name}.json"
    try:
        return json.loads(base.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(
            f"{path_or_name!r} is neither a file nor a bundled scenario; "
            f"bundled: {', '.join(bundled_names())}") from None


def build_design(cfg):
    x = cfg.design.crossover
    if x.policy == "parallel":
        policy = Parallel()
    elif x.policy == "at_cases":
        policy = AtCases(threshold=x.threshold, interlude_days=x.interlude_days,
                         count_arm=x.count_arm)
    elif x.policy == "at_time":
        policy = AtTime(day=x.day, interlude_days=x.interlude_days)
    elif x.policy == "continuous_uniform":
        policy = ContinuousUniform(start_day=x.start_day, end_day=x.end_day)
    else:
        raise ConfigError(f"unknown crossover policy {x.policy!r}")
    d = cfg.design
    try:
        return TrialDesign(
            n_participants=d.n_participants, allocation=d.allocation,
            accrual_days=d.accrual_days, followup_days=d.followup_days,
            dose_to_count_days=d.dose_to_count_days, crossover=policy,
            blackout_days=d.blackout_days, interlude_order=d.interlude_order,
            dropout_rate=d.dropout_rate, seed=d.seed)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def build_truth(cfg):
    t = cfg.truth
    if t.form == "constant":
        return ConstantVE(t.intercept)
    if t.form == "loglinear":
        return LogLinearVE(t.intercept, t.slope_per_year)
    if t.form == "piecewise":
        return PiecewiseConstantVE(tuple(t.log_hrs), tuple(t.changepoints_days))
    raise ConfigError(f"unknown truth form {t.form!r}")


def build_baseline(cfg, design, frailty):
    b = cfg.baseline
    if b.method == "explicit":
        if len(b.rates) != len(b.changepoints) + 1:
            raise ConfigError("explicit baseline needs len(rates) == "
                              "len(changepoints) + 1")
        return BaselineHazard(tuple(b.changepoints), tuple(b.rates))
    n_placebo = design.n_participants * (1.0 - design.allocation)
    if b.method == "nominal":
        return nominal_rates(b.targets, n_placebo, b.period_days)
    if b.method == "expected":
        return calibrate_rates(design, b.targets, b.period_days, frailty)
    raise ConfigError(f"unknown baseline method {b.method!r}")


def build_scenario(cfg):
    design = build_design(cfg)
    frailty = FrailtySpec(cfg.frailty.variance)
    return Scenario(design=design,
                    baseline=build_baseline(cfg, design, frailty),
                    true_profile=build_truth(cfg), frailty=frailty)


def _slope_scale(name):
    if name == "year":
        return DAYS_PER_YEAR
    if name == "day":
        return 1.0
    raise ConfigError(f"fit.slope_scale must be 'year' or 'day', got {name!r}")


def model_request(cfg, kind):
    return ModelRequest(kind=kind, slope_scale=_slope_scale(cfg.fit.slope_scale),
                        n_terms=cfg.fit.spline_terms,
                        target_df=None if cfg.fit.lam is not None else cfg.fit.target_df,
                        lam=cfg.fit.lam)


def build_study_spec(cfg):
    try:
        models = tuple(model_request(cfg, kind) for kind in cfg.study.models)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return StudySpec(
        scenario=build_scenario(cfg), n_replicates=cfg.study.n_replicates,
        models=models, eval_times_years=tuple(cfg.study.eval_times_years),
        base_seed=cfg.study.base_seed, analysis_day=cfg.study.analysis_day,
        ties=cfg.fit.ties)
