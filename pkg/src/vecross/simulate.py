"""Trial simulation: staggered entry, exact event draws, crossover, frailty.

Event times are drawn by inversion: with E ~ Exp(1), the event day solves
``cumulative_hazard(start, t) = E`` on the monotone cumulative hazard,
found by bisection (vectorized over participants) to 1e-9 days.  The
per-participant hazard is piecewise log-linear in calendar time for the
constant, log-linear and piecewise-constant profiles, so the bracketing
segment is located from closed-form segment integrals.

Crossover assigns each surviving participant an interlude day; volunteers
randomized to vaccine receive the same (counterfactual) blackout windows
as placebo volunteers, keeping case counting symmetric under blinded
crossover.  Outcomes that land inside a window are kept in the records
(the reshape censors them at the window start); participants who pass the
window redraw their residual time from the window end with a fresh Exp(1),
which is distributionally identical to continuing the old draw by
memorylessness.

All draws come from counter-based streams keyed by (seed, phase) and are
indexed by participant, so results are reproducible at any parallelism.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import rng as _rng
from .hazards import (BaselineHazard, ConstantVE, HazardContext, LogLinearVE,
                      PiecewiseConstantVE, cumulative_hazard)
from .trialdata import ParticipantRecord

_QUARTER_DAYS = 91.25
_BISECT_ITERS = 64


@dataclass(frozen=True)
class Parallel:
    """No crossover: the placebo arm is never vaccinated."""


@dataclass(frozen=True)
class AtCases:
    """Cross over when the k-th counted case occurs (both arms by default)."""

    threshold: int
    interlude_days: float = 28.0
    count_arm: str = "all"  # "all" or "placebo"

    def __post_init__(self):
        if self.threshold < 1:
            raise ValueError("threshold must be >= 1")
        if self.interlude_days < 0:
            raise ValueError("interlude_days must be >= 0")
        if self.count_arm not in ("all", "placebo"):
            raise ValueError("count_arm must be 'all' or 'placebo'")


@dataclass(frozen=True)
class AtTime:
    """Cross over starting at a fixed calendar day."""

    day: float
    interlude_days: float = 28.0

    def __post_init__(self):
        if self.interlude_days < 0:
            raise ValueError("interlude_days must be >= 0")


@dataclass(frozen=True)
class ContinuousUniform:
    """Vaccination days spread uniformly over a calendar window."""

    start_day: float
    end_day: float

    def __post_init__(self):
        if not self.start_day < self.end_day:
            raise ValueError("need start_day < end_day")


@dataclass(frozen=True)
class FrailtySpec:
    """Gamma frailty with mean one; variance 0 disables heterogeneity."""

    variance: float = 0.0

    def __post_init__(self):
        if self.variance < 0:
            raise ValueError("variance must be >= 0")


@dataclass(frozen=True)
class TrialDesign:
    """Enrollment, follow-up, and crossover configuration.

    First doses accrue linearly (uniformly) over ``accrual_days``; counted
    follow-up starts ``dose_to_count_days`` after the first dose and lasts
    ``followup_days``.  ``blackout_days`` is the per-dose window after a
    crossover dose during which cases are not counted.
    """

    n_participants: int
    allocation: float = 0.5
    accrual_days: float = 90.0
    followup_days: float = 730.0
    dose_to_count_days: float = 30.0
    crossover: object = field(default_factory=Parallel)
    blackout_days: float = 30.0
    interlude_order: str = "uniform"  # "uniform" | "enrollment" | "reverse-enrollment"
    dropout_rate: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.n_participants < 2:
            raise ValueError("need at least 2 participants")
        if not 0.0 <= self.allocation <= 1.0:
            raise ValueError("allocation must be in [0, 1]")
        if self.accrual_days < 0:
            raise ValueError("accrual_days must be >= 0")
        if self.followup_days <= 0:
            raise ValueError("followup_days must be > 0")
        if self.interlude_order not in ("uniform", "enrollment",
                                        "reverse-enrollment"):
            raise ValueError("unknown interlude_order")
        if not isinstance(self.crossover, Parallel) and self.blackout_days <= 0:
            raise ValueError("crossover designs need blackout_days > 0 so the "
                             "window (Xstart, Xend) is non-degenerate")

    @property
    def end_day(self):
        """Last possible follow-up day of the trial."""
        return self.accrual_days + self.dose_to_count_days + self.followup_days


@dataclass(frozen=True)
class Scenario:
    """Everything needed to generate one trial."""

    design: TrialDesign
    baseline: BaselineHazard
    true_profile: object
    frailty: FrailtySpec = field(default_factory=FrailtySpec)


def draw_entry_times(design, rng):
    """Counted-follow-up start days: first dose ~ U[0, accrual] plus the lag."""
    doses = rng.uniform(0.0, design.accrual_days, size=design.n_participants)
    return doses + design.dose_to_count_days


def _assign_arms(n, allocation, rng):
    n_vacc = int(round(n * allocation))
    arm = np.zeros(n, dtype=np.int64)
    arm[:n_vacc] = 1
    return rng.permutation(arm)


def _exp_segment_integral(d, rate0, slope):
    """Integral of rate0 * exp(slope * u) over [0, d], elementwise.

    Overflow to +inf on extreme segments is harmless: such segments are
    certain to contain the event and bisection re-evaluates on shrinking
    sub-intervals.
    """
    x = slope * d
    small = np.abs(x) < 1e-8
    safe = np.where(small, 1.0, slope)
    with np.errstate(over="ignore"):
        return rate0 * np.where(small, d * (1.0 + 0.5 * x), np.expm1(x) / safe)


def _hazard_segments(start, vacc_time, mult, baseline, profile, horizon):
    """Per-participant piecewise description of the hazard on [start, horizon].

    Returns (bounds, rate0, slope) with hazard rate0[:, j] *
    exp(slope[:, j] * (u - bounds[:, j])) on [bounds[:, j], bounds[:, j+1]).
    """
    n = len(start)
    cps = np.asarray(baseline.changepoints, dtype=float)
    cols = [np.broadcast_to(cps, (n, len(cps)))] if len(cps) else []
    if isinstance(profile, PiecewiseConstantVE) and len(profile.changepoints):
        pc = np.asarray(profile.changepoints, dtype=float)
        cols.append(vacc_time[:, None] + pc[None, :])
    cols.append(vacc_time[:, None])
    pts = np.concatenate(cols, axis=1)
    pts = np.clip(pts, start[:, None], horizon[:, None])
    bounds = np.sort(np.concatenate(
        [start[:, None], pts, horizon[:, None]], axis=1), axis=1)

    a = bounds[:, :-1]
    with np.errstate(invalid="ignore"):
        vaccinated = a >= vacc_time[:, None]
        s0 = np.where(vaccinated, a - vacc_time[:, None], 0.0)
    base = baseline.rate_at(a)
    slope = np.zeros_like(a)
    if isinstance(profile, ConstantVE):
        bump = np.full_like(a, profile.log_hr)
    elif isinstance(profile, LogLinearVE):
        b = profile.slope_per_year / profile.time_scale
        bump = profile.intercept + b * s0
        slope = np.where(vaccinated, b, 0.0)
    elif isinstance(profile, PiecewiseConstantVE):
        bump = profile.linear_predictor(s0)
    else:
        raise TypeError(f"no closed-form segments for {type(profile).__name__}; "
                        "use draw_event_time")
    rate0 = mult[:, None] * base * np.where(vaccinated, np.exp(bump), 1.0)
    return bounds, rate0, slope


def invert_event_times(e_draws, start, vacc_time, frailty, covariate_effect,
                       baseline, profile, horizon):
    """Solve cumulative_hazard(start, t) = e for each participant.

    Returns the event day, or +inf where the total hazard to ``horizon``
    is below the draw (censored).  Bisection on the bracketing segment to
    well below 1e-9 days.
    """
    e_draws = np.asarray(e_draws, dtype=float)
    mult = np.asarray(frailty, dtype=float) * np.exp(covariate_effect)
    bounds, rate0, slope = _hazard_segments(
        np.asarray(start, dtype=float), np.asarray(vacc_time, dtype=float),
        np.atleast_1d(mult) * np.ones_like(e_draws),
        baseline, profile, np.asarray(horizon, dtype=float))
    seg_cum = _exp_segment_integral(np.diff(bounds, axis=1), rate0, slope)
    H = np.cumsum(seg_cum, axis=1)
    k = H.shape[1]
    idx = (H < e_draws[:, None]).sum(axis=1)
    censored = idx >= k
    seg = np.minimum(idx, k - 1)
    rows = np.arange(len(e_draws))
    h_prev = np.where(seg > 0, H[rows, np.maximum(seg - 1, 0)], 0.0)
    target = e_draws - h_prev
    a = bounds[rows, seg]
    lo = a.copy()
    hi = bounds[rows, seg + 1]
    r0 = rate0[rows, seg]
    sl = slope[rows, seg]
    for _ in range(_BISECT_ITERS):
        mid = 0.5 * (lo + hi)
        go_right = _exp_segment_integral(mid - a, r0, sl) < target
        lo = np.where(go_right, mid, lo)
        hi = np.where(go_right, hi, mid)
    return np.where(censored, np.inf, 0.5 * (lo + hi))


def draw_event_time(ctx, baseline, profile, followup, rng):
    """Event day for one participant, or None if censored at entry+followup.

    Draws E ~ Exp(1) and inverts the exact cumulative hazard by bisection
    to an absolute tolerance of 1e-9 days.  Works for any profile; spline
    profiles use quadrature-backed scalar bisection.
    """
    e = float(rng.exponential())
    end = ctx.entry + followup
    if isinstance(profile, (ConstantVE, LogLinearVE, PiecewiseConstantVE)):
        t = invert_event_times(
            np.array([e]), np.array([ctx.entry]), np.array([ctx.vacc_time]),
            np.array([ctx.frailty]), ctx.covariate_effect, baseline, profile,
            np.array([end]))[0]
        return None if math.isinf(t) else float(t)
    total = cumulative_hazard(ctx.entry, end, baseline, ctx, profile)
    if e > total:
        return None
    lo, hi = ctx.entry, end
    while hi - lo > 1e-9:
        mid = 0.5 * (lo + hi)
        if cumulative_hazard(ctx.entry, mid, baseline, ctx, profile) < e:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def nominal_rates(targets, n_placebo, period_days=_QUARTER_DAYS):
    """Per-day rates from nominal person-time: rate_k = target_k / (n * len).

    Ignores staggered entry and depletion, the convention used by the
    bundled example scenarios.
    """
    targets = np.asarray(targets, dtype=float)
    if np.any(targets < 0):
        raise ValueError("targets must be >= 0")
    rates = targets / (n_placebo * period_days)
    cps = period_days * np.arange(1, len(targets))
    return BaselineHazard(changepoints=tuple(cps), rates=tuple(rates))


def calibrate_rates(design, targets, period_days=_QUARTER_DAYS,
                    frailty=FrailtySpec(), rel_tol=1e-6, quad_points=64):
    """Piecewise rates making expected counted placebo cases hit ``targets``.

    Solves period by period for the constant rate whose expected number of
    counted placebo-arm events in that period equals the target, accounting
    for staggered entry and depletion from earlier periods; gamma frailty
    is marginalized analytically.  Bisection on each rate to relative
    tolerance ``rel_tol``.
    """
    targets = np.asarray(targets, dtype=float)
    if np.any(targets < 0):
        raise ValueError("targets must be >= 0")
    n_placebo = design.n_participants * (1.0 - design.allocation)
    if n_placebo <= 0:
        raise ValueError("design has no placebo participants")
    lo_e = design.dose_to_count_days
    hi_e = design.dose_to_count_days + design.accrual_days
    if design.accrual_days > 0:
        # Gauss-Legendre nodes on the uniform entry distribution
        x, w = np.polynomial.legendre.leggauss(quad_points)
        entries = 0.5 * (hi_e - lo_e) * x + 0.5 * (hi_e + lo_e)
        weights = w / w.sum()
    else:
        entries = np.array([lo_e])
        weights = np.array([1.0])

    ends = period_days * np.arange(1, len(targets) + 1)
    starts = np.concatenate([[0.0], ends[:-1]])
    v = frailty.variance

    def marginal_survival(H):
        if v == 0.0:
            return np.exp(-H)
        return (1.0 + v * H) ** (-1.0 / v)

    rates = np.zeros(len(targets))

    def expected_in_period(k, rate_k):
        r = rates.copy()
        r[k] = rate_k
        # cumulative baseline from entry to t, piecewise over solved periods
        def H(t):
            exposure = np.clip(np.minimum(t, ends[None, :k + 1])
                               - np.maximum(entries[:, None], starts[None, :k + 1]),
                               0.0, None)
            return exposure @ r[:k + 1]
        return float(n_placebo * weights @ (marginal_survival(H(starts[k]))
                                            - marginal_survival(H(ends[k]))))

    for k, target in enumerate(targets):
        if target == 0.0:
            rates[k] = 0.0
            continue
        lo, hi = 0.0, max(2.0 * target / (n_placebo * period_days), 1e-12)
        while expected_in_period(k, hi) < target:
            hi *= 10.0
            if hi > 1e3:
                raise ValueError(f"target {target} in period {k} is infeasible "
                                 f"for {n_placebo:.0f} placebo participants")
        while hi - lo > rel_tol * hi:
            mid = 0.5 * (lo + hi)
            if expected_in_period(k, mid) < target:
                lo = mid
            else:
                hi = mid
        rates[k] = 0.5 * (lo + hi)

    return BaselineHazard(changepoints=tuple(ends[:-1]), rates=tuple(rates))


def crossover_windows(design, arm, entries, eventtime, status, rng):
    """Interlude windows per participant under the design's crossover policy.

    Returns ``(xstart, xend, trigger_day, triggered)``; ``xstart`` is NaN
    where no window applies.  Both arms receive windows (blinded-crossover
    symmetry); whether a window is ultimately recorded depends on the
    participant reaching it.
    """
    policy = design.crossover
    n = len(entries)
    nan = np.full(n, np.nan)
    if isinstance(policy, Parallel):
        return nan, nan, None, False

    if isinstance(policy, ContinuousUniform):
        u = rng.uniform(0.0, 1.0, size=n)
        lo = np.maximum(policy.start_day, entries)
        xstart = np.where(lo < policy.end_day,
                          lo + u * (policy.end_day - lo), np.nan)
        return xstart, xstart + design.blackout_days, None, True

    if isinstance(policy, AtTime):
        trigger = float(policy.day)
    else:  # AtCases
        counted = status == 1
        if policy.count_arm == "placebo":
            counted &= arm == 0
        days = np.sort(eventtime[counted])
        if len(days) < policy.threshold:
            return nan, nan, None, False
        trigger = float(days[policy.threshold - 1])

    interlude = policy.interlude_days
    offsets = rng.uniform(0.0, interlude, size=n) if interlude > 0 else np.zeros(n)
    if design.interlude_order != "uniform" and n > 1:
        ranks = np.argsort(np.argsort(entries, kind="stable"), kind="stable")
        frac = ranks / (n - 1)
        if design.interlude_order == "reverse-enrollment":
            frac = 1.0 - frac
        offsets = interlude * frac
    xstart = trigger + offsets
    return xstart, xstart + design.blackout_days, trigger, True


def _summary_stats(values):
    q25, q50, q75 = np.percentile(values, [25, 50, 75])
    return {"mean": float(np.mean(values)), "sd": float(np.std(values, ddof=1)),
            "q25": float(q25), "q50": float(q50), "q75": float(q75),
            "n": int(len(values))}


def simulate_trial(scenario, seed=None):
    """Generate one complete trial.

    Returns ``(records, metadata)`` where records are wide
    :class:`ParticipantRecord` rows (ids 1..n) and metadata carries the
    crossover trigger, counted case tallies by arm and calendar quarter,
    and frailty summaries among end-of-follow-up survivors when frailty is
    active.  Identical (scenario, seed) gives identical output.
    """
    design = scenario.design
    n = design.n_participants
    seed = design.seed if seed is None else seed

    entries = draw_entry_times(design, _rng.stream(seed, _rng.PHASE_ENTRY))
    arm = _assign_arms(n, design.allocation, _rng.stream(seed, _rng.PHASE_ARM))
    if scenario.frailty.variance > 0:
        v = scenario.frailty.variance
        frailty = _rng.stream(seed, _rng.PHASE_FRAILTY).gamma(1.0 / v, v, size=n)
    else:
        frailty = np.ones(n)
    censor = entries + design.followup_days
    if design.dropout_rate > 0:
        g = _rng.stream(seed, _rng.PHASE_DROPOUT)
        drop = g.uniform(size=n) < design.dropout_rate
        early = entries + g.uniform(size=n) * design.followup_days
        censor = np.where(drop, np.minimum(censor, early), censor)

    vt0 = np.where(arm == 1, entries, np.inf)
    e1 = _rng.stream(seed, _rng.PHASE_EVENT_PRE).exponential(size=n)
    t1 = invert_event_times(e1, entries, vt0, frailty, 0.0,
                            scenario.baseline, scenario.true_profile, censor)
    eventtime = np.where(np.isfinite(t1), t1, censor)
    status = np.isfinite(t1).astype(np.int64)

    xstart, xend, trigger, triggered = crossover_windows(
        design, arm, entries, eventtime, status,
        _rng.stream(seed, _rng.PHASE_XSTART))
    has_window = np.isfinite(xstart) & (eventtime >= xstart)

    redraw = has_window & (eventtime > xend)
    if redraw.any():
        e2 = _rng.stream(seed, _rng.PHASE_EVENT_POST).exponential(size=n)
        vt1 = np.where(arm == 1, entries, xend)
        t2 = invert_event_times(e2[redraw], xend[redraw], vt1[redraw],
                                frailty[redraw], 0.0, scenario.baseline,
                                scenario.true_profile, censor[redraw])
        eventtime = eventtime.copy()
        status = status.copy()
        eventtime[redraw] = np.where(np.isfinite(t2), t2, censor[redraw])
        status[redraw] = np.isfinite(t2).astype(np.int64)

    records = [
        ParticipantRecord(
            id=i + 1, arm=int(arm[i]), entry=float(entries[i]),
            xstart=float(xstart[i]) if has_window[i] else None,
            xend=float(xend[i]) if has_window[i] else None,
            eventtime=float(eventtime[i]), status=int(status[i]))
        for i in range(n)
    ]

    counted = (status == 1) & (~has_window | (eventtime > xend))
    quarters = np.floor(eventtime / _QUARTER_DAYS).astype(int)
    n_quarters = int(np.ceil(design.end_day / _QUARTER_DAYS))
    by_quarter = {}
    for arm_val, name in ((0, "placebo"), (1, "vaccine")):
        mask = counted & (arm == arm_val)
        by_quarter[name] = np.bincount(quarters[mask],
                                       minlength=n_quarters).tolist()
    metadata = {
        "seed": int(seed),
        "n_participants": int(n),
        "crossover_triggered": bool(triggered),
        "trigger_day": None if trigger is None else float(trigger),
        "cases_at_trigger": None if trigger is None else int(
            ((eventtime <= trigger) & (status == 1)).sum()),
        "n_crossover_windows": int(has_window.sum()),
        "counted_events": {
            "placebo": int((counted & (arm == 0)).sum()),
            "vaccine": int((counted & (arm == 1)).sum()),
        },
        "counted_events_by_quarter": by_quarter,
    }
    if scenario.frailty.variance > 0:
        survivors = (status == 0) & (eventtime >= censor - 1e-9)
        metadata["frailty_summary"] = {
            name: _summary_stats(frailty[survivors & (arm == arm_val)])
            for arm_val, name in ((0, "placebo"), (1, "vaccine"))
        }
    return records, metadata
