"""Partial-likelihood accumulation kernels and backend selection.

Two interchangeable backends compute the per-stratum sums of the
calendar-time Cox partial likelihood with time-varying vaccination
covariates:

* ``compiled`` -- the Cython extension ``vecross._speedups``; events are
  swept in ascending calendar order with a linked active list, so the cost
  is O((n + e) log n + e * kbar * p) per evaluation;
* ``python`` -- a vectorized numpy fallback that rebuilds the risk set
  per event time (O(n * e) membership tests, SIMD-fast at desk scale).

The backend is chosen at import (compiled when available, else python) and
can be forced with :func:`set_backend` or the ``VECROSS_BACKEND``
environment variable.  Both produce identical results to rounding error;
``tests/test_kernels.py`` checks them against each other and against the
naive reference implementation.

Model covariate blocks are described by ``(kind, aux)`` pairs:
``0`` constant ``[1]``; ``1`` log-linear ``[1, s/aux[0]]``; ``2``
piecewise one-hot with changepoints ``aux``; ``3`` clamped cubic B-spline
row with full knot vector ``aux``.
"""

import os

import numpy as np

from . import bspline

try:
    from . import _speedups

    HAVE_COMPILED = True
except ImportError:  # pragma: no cover - depends on build environment
    _speedups = None
    HAVE_COMPILED = False

KIND_CONSTANT = 0
KIND_LOGLINEAR = 1
KIND_PIECEWISE = 2
KIND_SPLINE = 3

_BACKENDS = ("compiled", "python")
_active = os.environ.get("VECROSS_BACKEND", "compiled" if HAVE_COMPILED else "python")
if _active not in _BACKENDS:
    raise ValueError(f"VECROSS_BACKEND must be one of {_BACKENDS}, got {_active!r}")
if _active == "compiled" and not HAVE_COMPILED:
    raise ImportError("VECROSS_BACKEND=compiled but vecross._speedups is not built")


def active_backend():
    return _active


def set_backend(name):
    """Force the kernel backend ('compiled' or 'python'); returns the old name."""
    global _active
    if name not in _BACKENDS:
        raise ValueError(f"backend must be one of {_BACKENDS}, got {name!r}")
    if name == "compiled" and not HAVE_COMPILED:
        raise ValueError("compiled backend requested but vecross._speedups is not built")
    old, _active = _active, name
    return old


def model_rows(kind, aux, p_model, s):
    """Covariate block rows for times-since-vaccination ``s`` (vaccinated only)."""
    s = np.asarray(s, dtype=float)
    m = len(s)
    if kind == KIND_CONSTANT:
        return np.ones((m, 1))
    if kind == KIND_LOGLINEAR:
        out = np.empty((m, 2))
        out[:, 0] = 1.0
        out[:, 1] = s / aux[0]
        return out
    if kind == KIND_PIECEWISE:
        out = np.zeros((m, p_model))
        out[np.arange(m), np.searchsorted(aux, s, side="right")] = 1.0
        return out
    if kind == KIND_SPLINE:
        return bspline.design_matrix(s, aux)
    raise ValueError(f"unknown model kind {kind}")


def eval_stratum(tstart, tstop, vacc, vtime, X, kind, aux, params, p_model,
                 enter_order, ev_times, ev_offsets, ev_members, efron, want,
                 backend=None):
    """Accumulate (loglik, grad, hess, bad_index) over one stratum.

    ``want`` is 0 for the log likelihood alone or 2 to also fill the score
    vector and observed information (negative Hessian).  ``bad_index`` is
    the index of an interval with a non-finite linear predictor, or -1.
    """
    backend = backend or _active
    p = p_model + X.shape[1]
    grad = np.zeros(p)
    hess = np.zeros((p, p))
    if backend == "compiled":
        ll, bad = _speedups.eval_stratum(
            tstart, tstop, vacc, vtime, X, kind, aux, params, p_model,
            enter_order, ev_times, ev_offsets, ev_members,
            bool(efron), int(want), grad, hess)
        if want >= 1 and bad < 0:
            ilo = np.tril_indices(p, -1)
            hess[ilo] = hess.T[ilo]
        return ll, grad, hess, bad
    return _eval_stratum_py(tstart, tstop, vacc, vtime, X, kind, aux, params,
                            p_model, ev_times, ev_offsets, ev_members,
                            efron, want, grad, hess)


def _eval_stratum_py(tstart, tstop, vacc, vtime, X, kind, aux, params, p_model,
                     ev_times, ev_offsets, ev_members, efron, want, grad, hess):
    px = X.shape[1]
    p = p_model + px
    beta_m = params[:p_model]
    beta_x = params[p_model:]
    vacc = vacc.astype(bool)
    ll = 0.0

    for g in range(len(ev_times)):
        t = ev_times[g]
        members = ev_members[ev_offsets[g]:ev_offsets[g + 1]]
        d = len(members)

        at_risk = (tstart < t) & (t <= tstop)
        idx = np.nonzero(at_risk)[0]
        vm = vacc[idx]
        eta = np.zeros(len(idx))
        rows_v = model_rows(kind, aux, p_model, t - vtime[idx[vm]])
        eta[vm] = rows_v @ beta_m
        if px:
            eta += X[idx] @ beta_x
        if not np.all(np.isfinite(eta)):
            return ll, grad, hess, int(idx[~np.isfinite(eta)][0])

        m = eta.max()
        w = np.exp(eta - m)
        S0 = w.sum()

        # event rows, from the same formulas as the risk-set rows
        vm_e = vacc[members]
        rows_e = np.zeros((d, p))
        rows_e[vm_e, :p_model] = model_rows(kind, aux, p_model,
                                            t - vtime[members[vm_e]])
        if px:
            rows_e[:, p_model:] = X[members]
        eta_e = rows_e @ params
        ll += eta_e.sum()

        if want >= 1:
            xmat = np.zeros((len(idx), p))
            xmat[vm, :p_model] = rows_v
            if px:
                xmat[:, p_model:] = X[idx]
            S1 = w @ xmat
            S2 = xmat.T @ (xmat * w[:, None])
            grad += rows_e.sum(axis=0)

        if efron:
            w_e = np.exp(eta_e - m)
            S0d = w_e.sum()
            if want >= 1:
                S1d = w_e @ rows_e
                S2d = rows_e.T @ (rows_e * w_e[:, None])
            for j in range(d):
                frac = j / d
                S0j = S0 - frac * S0d
                ll -= m + np.log(S0j)
                if want >= 1:
                    mean = (S1 - frac * S1d) / S0j
                    grad -= mean
                    hess += (S2 - frac * S2d) / S0j - np.outer(mean, mean)
        else:
            ll -= d * (m + np.log(S0))
            if want >= 1:
                mean = S1 / S0
                grad -= d * mean
                hess += d * (S2 / S0 - np.outer(mean, mean))

    return ll, grad, hess, -1
