"""Reported quantities: VE(s) curves, change contrasts, and tests.

All confidence intervals are Wald intervals on the log-hazard-ratio scale
(z = 1.959964), transformed to the VE scale afterwards.  The likelihood
ratio test against a constant vaccine effect uses one degree of freedom
for the log-linear model and the achieved effective degrees of freedom for
penalized spline fits (with the unpenalized log partial likelihood
evaluated at the penalized optimum, the conventional recipe for penalized
models); fractional degrees of freedom are supported through the
regularized incomplete gamma function.
"""

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from . import coxph, trialdata
from .hazards import DAYS_PER_YEAR

Z95 = 1.959964

_GAMMA_EPS = 1e-16
_GAMMA_MAX_ITER = 1000


@dataclass
class VECurve:
    """Pointwise VE(s) with Wald bands on the linear-predictor scale."""

    s: np.ndarray           # days since vaccination
    linear_predictor: np.ndarray
    se: np.ndarray
    ve: np.ndarray
    ve_lo: np.ndarray       # lower VE bound (from upper predictor bound)
    ve_hi: np.ndarray

    def to_csv(self, fh_or_path):
        import csv

        def _write(fh):
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["s_days", "linear_predictor", "se", "ve", "ve_lo", "ve_hi"])
            for i in range(len(self.s)):
                w.writerow([trialdata.format_day(self.s[i]),
                            repr(float(self.linear_predictor[i])),
                            repr(float(self.se[i])), repr(float(self.ve[i])),
                            repr(float(self.ve_lo[i])), repr(float(self.ve_hi[i]))])

        if hasattr(fh_or_path, "write"):
            _write(fh_or_path)
        else:
            with open(fh_or_path, "w", newline="", encoding="utf-8") as fh:
                _write(fh)


@dataclass
class LRTResult:
    statistic: float
    df: float
    p_value: float


def _design_row_block(fit, s):
    """Full design rows (model block plus zeroed covariate block) at ``s``."""
    rows_model = fit.model.design_rows(s)
    p = len(fit.params)
    rows = np.zeros((rows_model.shape[0], p))
    rows[:, :fit.model.n_params] = rows_model
    return rows


def ve_curve(fit, s_grid, z=Z95):
    """VE(s) curve with exact Wald bands (f is linear in the coefficients)."""
    if not fit.converged:
        raise coxph.ConvergenceError("fit did not converge; no curve reported")
    s = np.atleast_1d(np.asarray(s_grid, dtype=float))
    if np.any(s < 0):
        raise ValueError("time since vaccination must be >= 0")
    rows = _design_row_block(fit, s)
    f = rows @ fit.params
    var = np.einsum("ij,jk,ik->i", rows, fit.cov, rows)
    se = np.sqrt(np.maximum(var, 0.0))
    return VECurve(
        s=s, linear_predictor=f, se=se, ve=1.0 - np.exp(f),
        ve_lo=1.0 - np.exp(f + z * se), ve_hi=1.0 - np.exp(f - z * se),
    )


def ve_change(fit, s, z=Z95):
    """Contrast log(1-VE(s)) - log(1-VE(0)) with its Wald interval.

    Returns (estimate, se, (lo, hi)).
    """
    if not fit.converged:
        raise coxph.ConvergenceError("fit did not converge; no contrast reported")
    s = float(s)
    if s < 0:
        raise ValueError("time since vaccination must be >= 0")
    rows = _design_row_block(fit, np.array([s, 0.0]))
    c = rows[0] - rows[1]
    est = float(c @ fit.params)
    var = float(c @ fit.cov @ c)
    se = math.sqrt(max(var, 0.0))
    return est, se, (est - z * se, est + z * se)


def _lower_gamma_series(a, x):
    """Regularized lower incomplete gamma P(a, x) by series, for x < a + 1."""
    term = 1.0 / a
    total = term
    for n in range(1, _GAMMA_MAX_ITER):
        term *= x / (a + n)
        total += term
        if abs(term) < abs(total) * _GAMMA_EPS:
            break
    return total * math.exp(-x + a * math.log(x) - math.lgamma(a))

def _upper_gamma_cf(a, x):
    """Regularized upper incomplete gamma Q(a, x) by continued fraction (Lentz)."""
    tiny = 1e-300
    b = x + 1.0 - a
    c = 1.0 / tiny
    d = 1.0 / b if b != 0 else 1.0 / tiny
    h = d
    for i in range(1, _GAMMA_MAX_ITER):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < tiny:
            d = tiny
        c = b + an / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _GAMMA_EPS:
            break
    return h * math.exp(-x + a * math.log(x) - math.lgamma(a))


def gammainc_upper(a, x):
    """Regularized upper incomplete gamma Q(a, x), absolute error < 1e-12."""
    if a <= 0:
        raise ValueError("shape must be > 0")
    if x < 0:
        raise ValueError("x must be >= 0")
    if x == 0.0:
        return 1.0
    if x < a + 1.0:
        return 1.0 - _lower_gamma_series(a, x)
    return _upper_gamma_cf(a, x)


def chisq_sf(x, df):
    """Upper-tail chi-square probability, fractional df supported."""
    x = float(x)
    df = float(df)
    if x < 0:
        raise ValueError("x must be >= 0")
    if df <= 0:
        raise ValueError("df must be > 0")
    return gammainc_upper(df / 2.0, x / 2.0)


def lrt_time_varying(full_fit, null_fit):
    """Likelihood ratio test of a time-varying vaccine effect.

    The null must be the constant-effect model nested in the full model.
    The statistic uses unpenalized log partial likelihoods at the two
    optima and is clamped at zero; degrees of freedom are 1 for the
    log-linear model, the parameter-count difference for piecewise models
    and the achieved effective df for penalized spline fits.
    """
    if not isinstance(null_fit.model, coxph.ConstantModel):
        raise ValueError("null fit must use the constant-effect model")
    if isinstance(full_fit.model, coxph.ConstantModel):
        df = 1.0  # degenerate self-comparison; the statistic is ~0 and p ~1
    elif isinstance(full_fit.model, coxph.LogLinearModel):
        df = 1.0
    elif isinstance(full_fit.model, coxph.PiecewiseModel):
        df = float(full_fit.model.n_params - 1)
    elif isinstance(full_fit.model, coxph.SplineModel):
        df = float(full_fit.eff_df)
    else:
        raise ValueError("full model does not nest the constant-effect model")
    stat = 2.0 * (full_fit.loglik - null_fit.loglik)
    if stat < -1e-6:
        raise ValueError(
            f"full-model log likelihood is below the null ({stat / 2:.3e}); "
            "models are not nested or a fit did not converge")
    stat = max(stat, 0.0)
    return LRTResult(statistic=stat, df=df, p_value=chisq_sf(stat, df))


def spline_linear_trend(fit, n_grid=101, z=Z95):
    """Slope (per year) of the fitted spline curve projected on {1, s}.

    Weighted least squares over a uniform grid on the basis span with
    inverse pointwise-variance weights; the slope is a linear functional
    of the coefficients, so its variance follows by the delta method.
    Returns (estimate, se).
    """
    basis = fit.model.basis
    grid = np.linspace(0.0, basis.s_max, n_grid)
    rows = _design_row_block(fit, grid)
    f = rows @ fit.params
    var = np.einsum("ij,jk,ik->i", rows, fit.cov, rows)
    w = 1.0 / np.maximum(var, 1e-300)
    Xd = np.column_stack([np.ones(n_grid), grid / DAYS_PER_YEAR])
    XtW = Xd.T * w
    coef_map = np.linalg.solve(XtW @ Xd, XtW)  # (2, n_grid): f-values -> (a, b)
    slope_map = coef_map[1] @ rows             # linear functional of params
    est = float(slope_map @ fit.params)
    se = math.sqrt(max(float(slope_map @ fit.cov @ slope_map), 0.0))
    return est, se


@dataclass(frozen=True)
class PeriodVEEstimates:
    """Exact-rational two-period VE arithmetic under crossover."""

    ve_period1: Fraction
    counterfactual_placebo_cases: Fraction
    ve_period2: Fraction


def crossover_period_ve(vaccine_cases_1, placebo_cases_1,
                        vaccine_cases_2, deferred_cases_2):
    """Person-time VE estimates for a two-period trial with crossover at
    the period boundary.

    Period one compares vaccine to placebo cases directly.  In period two
    the placebo arm has been vaccinated; assuming the period-one efficacy
    applies to the newly vaccinated, their case count recovers the case
    count of a counterfactual placebo group, which the original-vaccine
    cases are compared against.  All arithmetic is exact.
    """
    if placebo_cases_1 <= 0 or deferred_cases_2 < 0:
        raise ValueError("case counts must be positive where divided")
    ve1 = 1 - Fraction(vaccine_cases_1, placebo_cases_1)
    if ve1 == 1:
        raise ValueError("period-one VE of 100% leaves the counterfactual undefined")
    counterfactual = Fraction(deferred_cases_2) / (1 - ve1)
    ve2 = 1 - Fraction(vaccine_cases_2) / counterfactual
    return PeriodVEEstimates(ve_period1=ve1,
                             counterfactual_placebo_cases=counterfactual,
                             ve_period2=ve2)
