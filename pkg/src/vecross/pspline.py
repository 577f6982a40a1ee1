"""Penalized B-spline models for the vaccine-effect decay curve.

The decay curve is expanded in a clamped cubic B-spline basis on equally
spaced knots over [0, s_max] with an order-2 difference penalty on the
coefficients.  Because the uncentered basis has partition of unity, the
constant function lies in its span, so the model is fitted without a
separate intercept column; the reported level at s = 0 and the centered
decay component (zero at s = 0) are derived linearly from the fitted
coefficients.  The penalty null space contains constant and linear
coefficient sequences, so smoothing never biases against constant or
linear decay.

Model complexity is measured by the effective degrees of freedom
trace[(H + lam*P)^-1 H] over the spline block; :func:`choose_lambda`
targets a requested value by bisection on log(lambda).
"""

from dataclasses import dataclass

import numpy as np

from . import bspline, coxph


@dataclass(frozen=True)
class PSplineBasis:
    """Clamped cubic B-spline basis on [0, s_max] with L terms.

    ``offsets`` holds the uncentered basis row at s = 0, so the centered
    basis is ``design(s) - offsets`` and vanishes at 0.
    """

    knots: tuple
    n_terms: int
    s_max: float
    offsets: tuple

    @property
    def degree(self):
        return bspline.DEGREE

    def design_matrix(self, s):
        return bspline.design_matrix(s, np.asarray(self.knots))

    def centered_design(self, s):
        return self.design_matrix(s) - np.asarray(self.offsets)


def build_basis(s_max, n_terms=8):
    """Equally spaced clamped cubic basis with ``n_terms`` >= 4 terms."""
    if not s_max > 0:
        raise ValueError("s_max must be > 0")
    if n_terms < 4:
        raise ValueError("need at least 4 basis terms")
    breakpoints = np.linspace(0.0, float(s_max), n_terms - 2)
    knots = bspline.knot_vector(breakpoints)
    offsets = bspline.design_matrix(np.array([0.0]), knots)[0]
    return PSplineBasis(knots=tuple(knots), n_terms=int(n_terms),
                        s_max=float(s_max), offsets=tuple(offsets))


def basis_for_data(data, n_terms=8):
    """Basis spanning the observed times since vaccination in ``data``."""
    finite = np.isfinite(data.vacc_time) & (data.vacc_status == 1)
    if not finite.any():
        raise ValueError("no vaccinated intervals; cannot place spline knots")
    s_max = float(np.max(data.tstop[finite] - data.vacc_time[finite]))
    if s_max <= 0:
        raise ValueError("no positive time since vaccination observed")
    return build_basis(s_max, n_terms)


def penalty_matrix(n_terms, order=2):
    """P = D'D with D the order-``order`` difference operator."""
    D = np.diff(np.eye(n_terms), n=order, axis=0)
    return D.T @ D


def _eff_df_from_information(hess, lam, P_full, n_spline):
    H_pen = hess + lam * P_full
    try:
        M = np.linalg.solve(H_pen, hess)
    except np.linalg.LinAlgError:
        raise coxph.SingularModelError(
            "penalized information is singular; cannot form effective df"
        ) from None
    return float(np.trace(M[:n_spline, :n_spline]))


def effective_df(data, basis, lam, params, *, ties="breslow", work=None):
    """trace[(H + lam*P)^-1 H] over the spline block at ``params``."""
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    model = coxph.SplineModel(basis)
    hess = coxph.information(data, model, params, ties=ties, work=work)
    P_full = np.zeros_like(hess)
    L = basis.n_terms
    P_full[:L, :L] = penalty_matrix(L)
    return _eff_df_from_information(hess, lam, P_full, L)


def fit_pspline(data, basis=None, *, lam=None, target_df=None, n_terms=8,
                ties="breslow", work=None):
    """Penalized fit of the spline decay model.

    Exactly one of ``lam`` and ``target_df`` must be given; with
    ``target_df`` the smoothing parameter is chosen by
    :func:`choose_lambda` first.  The result carries the achieved
    effective degrees of freedom and the penalty weight used.
    """
    if (lam is None) == (target_df is None):
        raise ValueError("give exactly one of lam and target_df")
    if basis is None:
        basis = basis_for_data(data, n_terms)
    if target_df is not None:
        lam, fit = _search_lambda(data, basis, target_df, ties=ties, work=work)
        return fit
    model = coxph.SplineModel(basis)
    P = penalty_matrix(basis.n_terms)
    return coxph.fit(data, model, ties=ties, penalty=(lam, P), work=work)


def choose_lambda(data, basis, target_df, *, ties="breslow", tol=0.01,
                  work=None):
    """Smoothing weight whose effective df matches ``target_df`` within ``tol``."""
    lam, _ = _search_lambda(data, basis, target_df, ties=ties, tol=tol,
                            work=work)
    return lam


def _search_lambda(data, basis, target_df, *, ties="breslow", tol=0.01,
                   work=None, lo=1e-2, hi=1e3):
    L = basis.n_terms
    if not 2.0 < target_df <= L:
        raise ValueError(f"target_df must lie in (2, {L}], got {target_df}")
    work = work or coxph._CoxWork(data)
    model = coxph.SplineModel(basis)
    P = penalty_matrix(L)

    init = None

    def df_at(lam):
        nonlocal init
        f = coxph.fit(data, model, ties=ties, penalty=(lam, P), init=init,
                      work=work)
        init = f.params
        return f.eff_df, f

    df_lo, f_lo = df_at(lo)
    while df_lo < target_df - tol and lo > 1e-14:
        lo /= 100.0
        df_lo, f_lo = df_at(lo)
    if df_lo < target_df - tol:
        raise ValueError(f"target_df {target_df} unreachable: df at "
                         f"lambda={lo:g} is {df_lo:.3f}")
    if abs(df_lo - target_df) <= tol:
        return lo, f_lo

    df_hi, f_hi = df_at(hi)
    while df_hi > target_df + tol and hi < 1e16:
        hi *= 100.0
        df_hi, f_hi = df_at(hi)
    if df_hi > target_df + tol:
        raise ValueError(f"target_df {target_df} unreachable: df at "
                         f"lambda={hi:g} is only down to {df_hi:.3f}")
    if abs(df_hi - target_df) <= tol:
        return hi, f_hi

    # df is continuous and monotone decreasing in lambda: Illinois-type
    # regula falsi on log(lambda), guarded by the bracket
    x_lo, y_lo = np.log(lo), df_lo - target_df   # > 0
    x_hi, y_hi = np.log(hi), df_hi - target_df   # < 0
    last_side = 0
    for _ in range(200):
        x_mid = x_lo + y_lo * (x_hi - x_lo) / (y_lo - y_hi)
        span = x_hi - x_lo
        x_mid = min(max(x_mid, x_lo + 0.01 * span), x_hi - 0.01 * span)
        df_mid, f_mid = df_at(np.exp(x_mid))
        if abs(df_mid - target_df) <= tol:
            return float(np.exp(x_mid)), f_mid
        if df_mid > target_df:
            x_lo, y_lo = x_mid, df_mid - target_df
            if last_side == 1:
                y_hi *= 0.5
            last_side = 1
        else:
            x_hi, y_hi = x_mid, df_mid - target_df
            if last_side == -1:
                y_lo *= 0.5
            last_side = -1
    raise RuntimeError("lambda search did not converge")


def centered_coefficients(fit):
    """(level-at-0 || decay coefs) with covariance, from a spline fit.

    The level is the fitted curve at s = 0; the decay coefficients are
    unchanged (the centered basis shifts only the level).  The returned
    covariance is the exact linear transform of the fit's covariance and
    is singular by construction.
    """
    basis = fit.model.basis
    L = basis.n_terms
    p = len(fit.params)
    T = np.zeros((p + 1, p))
    T[0, :L] = np.asarray(basis.offsets)
    T[1:, :] = np.eye(p)
    coefs = T @ fit.params
    cov = T @ fit.cov @ T.T
    names = ("level",) + fit.names
    return coefs, cov, names
