"""Calendar-time Cox partial likelihood with time-varying vaccination effects.

The model for the log hazard ratio of interval ``j`` at event time ``t`` is::

    eta_j(t) = vacc_status_j * f(t - vacc_time_j; theta) + x_j' beta

where ``f`` is one of the vaccine-effect forms below.  Risk sets use the
counting-process convention ``tstart < t <= tstop`` within stratum, so
left truncation is inherent.  The baseline hazard never appears.

Fitting is Newton-Raphson with step-halving on the (optionally penalized)
log partial likelihood; derivatives are exact.  Ties are handled by the
Breslow approximation by default, with Efron available.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from . import _kernels
from .hazards import DAYS_PER_YEAR


class NoEventsError(ValueError):
    """The data contain no events, so the partial likelihood is undefined."""


class NonFiniteLinearPredictor(ValueError):
    """A linear predictor overflowed; reports the offending interval."""


class SingularModelError(ValueError):
    """The observed information is singular along the reported direction."""

    def __init__(self, message, null_direction=None):
        super().__init__(message)
        self.null_direction = null_direction


class ConvergenceError(ValueError):
    """Raised by helpers that require a converged fit."""


class _ModelBase:
    """Shared behaviour of the vaccine-effect covariate blocks."""

    def design_rows(self, s):
        """Covariate block rows for a vaccinated subject at ``s`` days."""
        s = np.atleast_1d(np.asarray(s, dtype=float))
        if np.any(s < 0):
            raise ValueError("time since vaccination must be >= 0")
        return _kernels.model_rows(self.kind, self.aux, self.n_params, s)

    @property
    def aux(self):
        return self._aux


class ConstantModel(_ModelBase):
    """Constant log hazard ratio (no time dependence)."""

    kind = _kernels.KIND_CONSTANT
    n_params = 1
    names = ("log_hr",)

    def __init__(self):
        self._aux = np.empty(0)


class LogLinearModel(_ModelBase):
    """Log-linear decay; slope denominated per ``slope_scale`` days."""

    kind = _kernels.KIND_LOGLINEAR
    n_params = 2
    names = ("intercept", "slope")

    def __init__(self, slope_scale=DAYS_PER_YEAR):
        if slope_scale <= 0:
            raise ValueError("slope_scale must be > 0")
        self.slope_scale = float(slope_scale)
        self._aux = np.array([self.slope_scale])


class PiecewiseModel(_ModelBase):
    """Piecewise-constant log hazard ratio on [0, c1), [c1, c2), ..."""

    kind = _kernels.KIND_PIECEWISE

    def __init__(self, changepoints):
        cps = np.asarray(changepoints, dtype=float)
        if cps.ndim != 1 or cps.size == 0:
            raise ValueError("need at least one changepoint")
        if np.any(np.diff(cps) <= 0) or cps[0] <= 0:
            raise ValueError("changepoints must be strictly increasing and > 0")
        self._aux = cps
        self.changepoints = cps
        self.n_params = len(cps) + 1
        self.names = tuple(f"log_hr_{k}" for k in range(self.n_params))


class SplineModel(_ModelBase):
    """Cubic B-spline log hazard ratio on the basis's knot span.

    Internally the block is the uncentered basis (the constant function is
    in its span, so no separate intercept column is fitted); the centered
    report with an explicit level at s = 0 is a derived quantity.
    """

    kind = _kernels.KIND_SPLINE

    def __init__(self, basis):
        self.basis = basis
        self._aux = np.asarray(basis.knots, dtype=float)
        self.n_params = basis.n_terms
        self.names = tuple(f"spline_{k + 1}" for k in range(self.n_params))


@dataclass
class FitResult:
    """Estimates and inference from one partial-likelihood maximization.

    ``loglik`` is the unpenalized log partial likelihood at ``params``;
    ``cov`` is the inverse of the (penalized, if applicable) observed
    information, and ``cov_sandwich`` the H_pen^-1 H H_pen^-1 form for
    penalized fits.  ``eff_df`` equals the parameter count for unpenalized
    fits and trace[(H + lam*P)^-1 H] over the spline block otherwise.
    """

    model: object
    params: np.ndarray
    names: tuple
    cov: np.ndarray
    loglik: float
    penalized_loglik: float
    iterations: int
    converged: bool
    eff_df: float
    n_events: int
    n_intervals: int
    ties: str
    penalty_lambda: float | None = None
    cov_sandwich: np.ndarray | None = None
    max_score: float = math.nan

    def se(self):
        return np.sqrt(np.diag(self.cov))

    def coef_table(self, z=1.959964):
        lines = [f"{'term':>12} {'estimate':>12} {'se':>10} "
                 f"{'lo95':>10} {'hi95':>10}"]
        se = self.se()
        for name, est, s in zip(self.names, self.params, se):
            lines.append(f"{name:>12} {est:>12.5f} {s:>10.5f} "
                         f"{est - z * s:>10.5f} {est + z * s:>10.5f}")
        return "\n".join(lines)


class _CoxWork:
    """Per-dataset sorting and tie-grouping, reused across evaluations."""

    def __init__(self, data):
        self.data = data
        self.n_covariates = data.n_covariates
        if data.n_events == 0:
            raise NoEventsError("no events in the data")
        self.strata = []
        for g in np.unique(data.stratum):
            mask = data.stratum == g
            if not data.event[mask].any():
                continue  # event-free strata contribute nothing
            idx = np.nonzero(mask)[0]
            tstart = np.ascontiguousarray(data.tstart[idx])
            tstop = np.ascontiguousarray(data.tstop[idx])
            vacc = np.ascontiguousarray(data.vacc_status[idx], dtype=np.int64)
            vtime = np.ascontiguousarray(data.vacc_time[idx])
            if data.covariates is not None:
                X = np.ascontiguousarray(data.covariates[idx], dtype=float)
            else:
                X = np.zeros((len(idx), 0))
            enter_order = np.argsort(tstart, kind="stable").astype(np.int64)
            ev_local = np.nonzero(data.event[idx] == 1)[0]
            order = np.argsort(tstop[ev_local], kind="stable")
            ev_local = ev_local[order]
            times = tstop[ev_local]
            change = np.nonzero(np.diff(times))[0] + 1
            starts = np.concatenate([[0], change, [len(times)]]).astype(np.int64)
            self.strata.append(dict(
                tstart=tstart, tstop=tstop, vacc=vacc, vtime=vtime, X=X,
                enter_order=enter_order,
                ev_times=np.ascontiguousarray(times[starts[:-1]]),
                ev_offsets=np.ascontiguousarray(starts),
                ev_members=np.ascontiguousarray(ev_local, dtype=np.int64),
                idx=idx,
            ))

    def evaluate(self, model, params, ties="breslow", want=2, backend=None):
        params = np.ascontiguousarray(params, dtype=float)
        p = model.n_params + self.n_covariates
        if len(params) != p:
            raise ValueError(f"expected {p} parameters, got {len(params)}")
        aux = np.ascontiguousarray(model.aux, dtype=float)
        ll = 0.0
        grad = np.zeros(p)
        hess = np.zeros((p, p))
        for s in self.strata:
            ll_s, g_s, h_s, bad = _kernels.eval_stratum(
                s["tstart"], s["tstop"], s["vacc"], s["vtime"], s["X"],
                model.kind, aux, params, model.n_params,
                s["enter_order"], s["ev_times"], s["ev_offsets"],
                s["ev_members"], ties == "efron", want, backend=backend)
            if bad >= 0:
                raise NonFiniteLinearPredictor(
                    f"non-finite linear predictor for interval "
                    f"id={self.data.id[s['idx'][bad]]} at params={params}")
            ll += ll_s
            if want >= 1:
                grad += g_s
                hess += h_s
        return ll, grad, hess


def _pad_penalty(penalty, p_total, p_model):
    if penalty is None:
        return None, None
    lam, P = penalty
    P = np.asarray(P, dtype=float)
    if P.shape[0] > p_model:
        raise ValueError("penalty block larger than the model block")
    P_full = np.zeros((p_total, p_total))
    P_full[:P.shape[0], :P.shape[1]] = P
    return float(lam), P_full


def _describe_null_direction(H, names):
    w, v = np.linalg.eigh(H)
    direction = v[:, 0]
    loads = sorted(zip(np.abs(direction), names), reverse=True)
    main = ", ".join(name for a, name in loads if a > 0.3) or names[int(np.argmax(np.abs(direction)))]
    return direction, main


def log_partial_likelihood(data, model, params, *, ties="breslow", work=None):
    """Unpenalized log partial likelihood at ``params``."""
    work = work or _CoxWork(data)
    ll, _, _ = work.evaluate(model, params, ties=ties, want=0)
    return ll


def score(data, model, params, *, ties="breslow", penalty=None, work=None):
    """Analytic gradient; penalized fits subtract lam * P @ params."""
    work = work or _CoxWork(data)
    _, grad, _ = work.evaluate(model, params, ties=ties, want=2)
    lam, P_full = _pad_penalty(penalty, len(grad), model.n_params)
    if lam is not None:
        grad = grad - lam * (P_full @ np.asarray(params, dtype=float))
    return grad


def information(data, model, params, *, ties="breslow", penalty=None, work=None):
    """Observed information (negative Hessian); penalized fits add lam * P."""
    work = work or _CoxWork(data)
    _, _, hess = work.evaluate(model, params, ties=ties, want=2)
    lam, P_full = _pad_penalty(penalty, hess.shape[0], model.n_params)
    if lam is not None:
        hess = hess + lam * P_full
    return hess


def fit(data, model, *, ties="breslow", penalty=None, init=None,
        max_iter=50, loglik_tol=1e-9, score_tol=1e-6, work=None):
    """Maximize the (optionally penalized) log partial likelihood.

    Newton-Raphson from zero (or ``init``), halving the step up to 10
    times whenever the objective does not increase.  Converged means
    ``|delta loglik| < loglik_tol`` and ``max |score| < score_tol``;
    non-convergence returns a flagged result with the last iterate, while
    a singular information matrix raises :class:`SingularModelError`
    naming the flat direction.
    """
    if ties not in ("breslow", "efron"):
        raise ValueError(f"ties must be 'breslow' or 'efron', got {ties!r}")
    work = work or _CoxWork(data)
    p = model.n_params + work.n_covariates
    params = np.zeros(p) if init is None else np.asarray(init, dtype=float).copy()
    names = tuple(model.names) + tuple(f"x{k + 1}" for k in range(work.n_covariates))
    lam, P_full = _pad_penalty(penalty, p, model.n_params)

    def objective(ll, b):
        if lam is None:
            return ll
        return ll - 0.5 * lam * float(b @ P_full @ b)

    ll, grad, hess = work.evaluate(model, params, ties=ties, want=2)
    obj = objective(ll, params)
    obj_prev = None
    iterations = 0
    converged = False
    while True:
        g_eff = grad if lam is None else grad - lam * (P_full @ params)
        H_eff = hess if lam is None else hess + lam * P_full
        max_score = float(np.max(np.abs(g_eff)))
        if max_score < score_tol and (obj_prev is None
                                      or abs(obj - obj_prev) < loglik_tol):
            converged = True
            break
        if iterations >= max_iter:
            break
        try:
            chol = cho_factor(H_eff)
        except np.linalg.LinAlgError:
            direction, main = _describe_null_direction(H_eff, names)
            raise SingularModelError(
                f"singular information: no curvature along {main} "
                f"(null direction {np.round(direction, 4)})",
                null_direction=direction) from None
        delta = cho_solve(chol, g_eff)
        step = 1.0
        accepted = False
        for halving in range(11):
            cand = params + step * delta
            # the full step is usually accepted: compute derivatives with it
            want = 2 if halving == 0 else 0
            try:
                out = work.evaluate(model, cand, ties=ties, want=want)
            except NonFiniteLinearPredictor:
                out = (-np.inf, None, None)
            obj_c = objective(out[0], cand)
            if np.isfinite(obj_c) and obj_c > obj:
                accepted = True
                if want != 2:
                    out = work.evaluate(model, cand, ties=ties, want=2)
                ll, grad, hess = out
                break
            step *= 0.5
        if not accepted:
            # the objective cannot improve within rounding; if the score is
            # already below tolerance this is the optimum
            converged = max_score < score_tol
            break
        params = cand
        obj_prev = obj
        obj = obj_c
        iterations += 1

    H_eff = hess if lam is None else hess + lam * P_full
    try:
        chol = cho_factor(H_eff)
        cov = cho_solve(chol, np.eye(p))
    except np.linalg.LinAlgError:
        direction, main = _describe_null_direction(H_eff, names)
        raise SingularModelError(
            f"singular information at the optimum: no curvature along {main}",
            null_direction=direction) from None

    cov_sandwich = None
    eff_df = float(p)
    if lam is not None:
        cov_sandwich = cov @ hess @ cov
        eff_df = float(np.trace(cho_solve(chol, hess)[:model.n_params,
                                                       :model.n_params]))

    g_eff = grad if lam is None else grad - lam * (P_full @ params)
    return FitResult(
        model=model, params=params, names=names, cov=cov, loglik=ll,
        penalized_loglik=obj, iterations=iterations, converged=converged,
        eff_df=eff_df, n_events=data.n_events, n_intervals=len(data),
        ties=ties, penalty_lambda=lam, cov_sandwich=cov_sandwich,
        max_score=float(np.max(np.abs(g_eff))),
    )
