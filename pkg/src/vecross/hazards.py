"""Hazard-scale building blocks.

Vaccine-effect profiles model the log hazard ratio ``f(s)`` as a function
of time ``s`` since vaccination, so that ``VE(s) = 1 - exp(f(s))``.  A
participant's hazard at calendar day ``t`` is::

    h(t) = 0                                                   t <= entry
    h(t) = U * h0(t) * exp(x'b) * exp(Z(t) * f(t - vacc_time))  t > entry

with ``Z(t) = 1{t > vacc_time}``, ``U`` a positive frailty multiplier and
``x'b`` a fixed covariate effect.  Slopes and other per-time coefficients
are denominated per year (365 days) while ``s`` itself is carried in days,
so fitted coefficients are directly comparable across parameterizations.

``cumulative_hazard`` integrates the hazard exactly: the baseline is
piecewise constant and the profiles are piecewise log-linear in ``t``, so
every segment has a closed form; spline profiles fall back to adaptive
quadrature.
"""

import math
from dataclasses import dataclass

import numpy as np

DAYS_PER_YEAR = 365.0

# switch to the linear Taylor form of (exp(b*d) - 1)/b below this |b*d|
_EXP_INTEGRAL_TAYLOR = 1e-8


def _check_nonnegative_s(s):
    s = np.asarray(s, dtype=float)
    if np.any(s < 0):
        raise ValueError("time since vaccination must be >= 0")
    return s


@dataclass(frozen=True)
class ConstantVE:
    """Constant log hazard ratio: f(s) = log_hr."""

    log_hr: float

    def linear_predictor(self, s):
        s = _check_nonnegative_s(s)
        return np.full(s.shape, self.log_hr) if s.ndim else float(self.log_hr)


@dataclass(frozen=True)
class LogLinearVE:
    """Log-linear decay: f(s) = intercept + slope_per_year * s / time_scale."""

    intercept: float
    slope_per_year: float
    time_scale: float = DAYS_PER_YEAR

    def linear_predictor(self, s):
        s = _check_nonnegative_s(s)
        out = self.intercept + self.slope_per_year * s / self.time_scale
        return out if s.ndim else float(out)


@dataclass(frozen=True)
class PiecewiseConstantVE:
    """Piecewise-constant log hazard ratio on [0, c1), [c1, c2), ...

    Segments are closed on the left and open on the right; the first
    segment starts implicitly at s = 0 and the last extends to infinity.
    """

    log_hrs: tuple
    changepoints: tuple

    def __post_init__(self):
        cps = np.asarray(self.changepoints, dtype=float)
        if len(self.log_hrs) != len(cps) + 1:
            raise ValueError("need len(log_hrs) == len(changepoints) + 1")
        if cps.size and (np.any(np.diff(cps) <= 0) or cps[0] <= 0):
            raise ValueError("changepoints must be strictly increasing and > 0")

    def linear_predictor(self, s):
        s = _check_nonnegative_s(s)
        idx = np.searchsorted(np.asarray(self.changepoints, dtype=float), s, side="right")
        out = np.asarray(self.log_hrs, dtype=float)[idx]
        return out if s.ndim else float(out)


@dataclass(frozen=True)
class PSplineVE:
    """Semiparametric decay: f(s) = level + centered basis row(s) @ coefs.

    The basis is centered so the decay component vanishes at s = 0; the
    ``level`` is therefore the log hazard ratio at vaccination.
    """

    level: float
    coefs: tuple
    basis: object  # pspline.PSplineBasis

    def linear_predictor(self, s):
        s = _check_nonnegative_s(s)
        rows = self.basis.centered_design(np.atleast_1d(s))
        out = self.level + rows @ np.asarray(self.coefs, dtype=float)
        return out if s.ndim else float(out[0])


def linear_predictor(profile, s):
    """Evaluate the log hazard ratio f(s; profile) at s days post-vaccination."""
    return profile.linear_predictor(s)


def ve_at(profile, s):
    """Vaccine efficacy VE(s) = 1 - exp(f(s)), in (-inf, 1)."""
    return 1.0 - np.exp(profile.linear_predictor(s))


@dataclass(frozen=True)
class BaselineHazard:
    """Piecewise-constant reference hazard h0(t), in events per day.

    ``rates[k]`` applies on ``[changepoints[k-1], changepoints[k])`` with the
    first segment starting at 0 and the last rate extending to infinity.
    """

    changepoints: tuple
    rates: tuple

    def __post_init__(self):
        cps = np.asarray(self.changepoints, dtype=float)
        rates = np.asarray(self.rates, dtype=float)
        if len(rates) != len(cps) + 1:
            raise ValueError("need len(rates) == len(changepoints) + 1")
        if cps.size and np.any(np.diff(cps) <= 0):
            raise ValueError("changepoints must be strictly increasing")
        if np.any(rates < 0):
            raise ValueError("rates must be >= 0")

    def rate_at(self, t):
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(np.asarray(self.changepoints, dtype=float), t, side="right")
        out = np.asarray(self.rates, dtype=float)[idx]
        return out if t.ndim else float(out)

    def cumulative(self, t1, t2):
        """Integral of h0 over [t1, t2]."""
        if t2 < t1:
            raise ValueError("need t1 <= t2")
        cps = np.asarray(self.changepoints, dtype=float)
        rates = np.asarray(self.rates, dtype=float)
        bounds = np.concatenate([[t1], cps[(cps > t1) & (cps < t2)], [t2]])
        return float(np.sum(rates[np.searchsorted(cps, bounds[:-1], side="right")] * np.diff(bounds)))


@dataclass(frozen=True)
class HazardContext:
    """Per-participant hazard inputs: entry day, vaccination day, frailty, x'b."""

    entry: float
    vacc_time: float = math.inf
    frailty: float = 1.0
    covariate_effect: float = 0.0

    def __post_init__(self):
        if not self.frailty > 0:
            raise ValueError("frailty must be > 0")


def hazard_at(t, baseline, ctx, profile):
    """Participant hazard at calendar day t (vectorized over t)."""
    t = np.asarray(t, dtype=float)
    vaccinated = t > ctx.vacc_time
    s = np.where(vaccinated, np.maximum(t - ctx.vacc_time, 0.0), 0.0)
    bump = np.where(vaccinated, profile.linear_predictor(s), 0.0)
    out = ctx.frailty * baseline.rate_at(t) * np.exp(ctx.covariate_effect + bump)
    out = np.where(t > ctx.entry, out, 0.0)
    return out if t.ndim else float(out)


def _exp_integral(d, b):
    """Integral of exp(b*u) over [0, d], with the b -> 0 limit handled."""
    if abs(b * d) < _EXP_INTEGRAL_TAYLOR:
        return d * (1.0 + 0.5 * b * d)
    return math.expm1(b * d) / b


def _segment_breakpoints(t1, t2, baseline, ctx, profile):
    pts = [t1, t2]
    pts.extend(c for c in baseline.changepoints if t1 < c < t2)
    if t1 < ctx.vacc_time < t2:
        pts.append(ctx.vacc_time)
    if isinstance(profile, PiecewiseConstantVE):
        pts.extend(ctx.vacc_time + c for c in profile.changepoints
                   if t1 < ctx.vacc_time + c < t2)
    return sorted(pts)


def cumulative_hazard(t1, t2, baseline, ctx, profile):
    """Exact integral of the participant hazard over [t1, t2].

    Closed form per baseline segment for constant, piecewise-constant and
    log-linear profiles; adaptive quadrature (relative tolerance 1e-10) for
    spline profiles.
    """
    if t2 < t1:
        raise ValueError("need t1 <= t2")
    lo = max(t1, ctx.entry)
    if lo >= t2:
        return 0.0
    mult = ctx.frailty * math.exp(ctx.covariate_effect)
    total = 0.0
    bounds = _segment_breakpoints(lo, t2, baseline, ctx, profile)
    for a, b in zip(bounds[:-1], bounds[1:]):
        if b <= a:
            continue
        rate = baseline.rate_at(a)
        if rate == 0.0:
            continue
        if a < ctx.vacc_time:
            total += mult * rate * (b - a)
            continue
        s0 = a - ctx.vacc_time
        if isinstance(profile, LogLinearVE):
            bcoef = profile.slope_per_year / profile.time_scale
            level = math.exp(profile.intercept + bcoef * s0)
            total += mult * rate * level * _exp_integral(b - a, bcoef)
        elif isinstance(profile, (ConstantVE, PiecewiseConstantVE)):
            total += mult * rate * math.exp(profile.linear_predictor(s0)) * (b - a)
        else:
            from scipy.integrate import quad

            val, _ = quad(
                lambda u: math.exp(profile.linear_predictor(u - ctx.vacc_time)),
                a, b, epsabs=0.0, epsrel=1e-10, limit=200,
            )
            total += mult * rate * val
    return total
