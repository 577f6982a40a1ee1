# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled accumulation kernel for the calendar-time partial likelihood.

Line-for-line C translation of the math in ``_kernels._eval_stratum_py``
with membership maintained by an ascending sweep: intervals enter the
active list in tstart order and are unlinked the first time they are seen
dead, so each interval is linked and unlinked exactly once.  Sums are
centered at the risk-set maximum of the linear predictor before
exponentiation.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, isfinite, log

cnp.import_array()


cdef inline void _model_row(int kind, const double* aux, int naux,
                            double s, double* out, int pm) noexcept nogil:
    """Covariate block for one vaccinated member at s days post-vaccination."""
    cdef int i, j, r, span, L
    cdef double saved, temp
    cdef double nvals[4]
    cdef double left[4]
    cdef double right[4]
    if kind == 0:
        out[0] = 1.0
    elif kind == 1:
        out[0] = 1.0
        out[1] = s / aux[0]
    elif kind == 2:
        for i in range(pm):
            out[i] = 0.0
        j = 0
        while j < naux and s >= aux[j]:
            j += 1
        out[j] = 1.0
    else:
        # clamped cubic B-spline row; aux is the full knot vector (pm + 4)
        L = pm
        for i in range(pm):
            out[i] = 0.0
        if s < aux[3]:
            s = aux[3]
        if s > aux[L]:
            s = aux[L]
        span = 3
        while span < L - 1 and s >= aux[span + 1]:
            span += 1
        nvals[0] = 1.0
        for j in range(1, 4):
            left[j] = s - aux[span + 1 - j]
            right[j] = aux[span + j] - s
            saved = 0.0
            for r in range(j):
                temp = nvals[r] / (right[r + 1] + left[j - r])
                nvals[r] = saved + right[r + 1] * temp
                saved = left[j - r] * temp
            nvals[j] = saved
        for i in range(4):
            out[span - 3 + i] = nvals[i]


def eval_stratum(const double[::1] tstart, const double[::1] tstop,
                 const cnp.int64_t[::1] vacc, const double[::1] vtime,
                 const double[:, ::1] X,
                 int kind, const double[::1] aux,
                 const double[::1] params, int pm,
                 const cnp.int64_t[::1] enter_order,
                 const double[::1] ev_times,
                 const cnp.int64_t[::1] ev_offsets,
                 const cnp.int64_t[::1] ev_members,
                 bint efron, int want,
                 double[::1] grad, double[:, ::1] hess):
    """Accumulate loglik (returned), score and upper-triangular information.

    Returns ``(loglik, bad_index)``; ``bad_index >= 0`` flags an interval
    with a non-finite linear predictor.
    """
    cdef Py_ssize_t n = tstart.shape[0]
    cdef int px = <int>X.shape[1]
    cdef int p = pm + px
    cdef int naux = <int>aux.shape[0]
    cdef Py_ssize_t n_groups = ev_times.shape[0]

    buf_eta = np.empty(n, dtype=np.float64)
    buf_row = np.empty((n, pm), dtype=np.float64)
    buf_nxt = np.empty(n + 1, dtype=np.int64)
    buf_prv = np.empty(n + 1, dtype=np.int64)
    buf_tied = np.zeros(n, dtype=np.int64)
    buf_s1 = np.empty(p, dtype=np.float64)
    buf_s2 = np.empty((p, p), dtype=np.float64)
    buf_s1d = np.empty(p, dtype=np.float64)
    buf_s2d = np.empty((p, p), dtype=np.float64)
    buf_x = np.empty(p, dtype=np.float64)
    buf_mean = np.empty(p, dtype=np.float64)

    cdef double[::1] eta_buf = buf_eta
    cdef double[:, ::1] row_buf = buf_row
    cdef cnp.int64_t[::1] nxt = buf_nxt
    cdef cnp.int64_t[::1] prv = buf_prv
    cdef cnp.int64_t[::1] is_tied = buf_tied
    cdef double[::1] S1 = buf_s1
    cdef double[:, ::1] S2 = buf_s2
    cdef double[::1] S1d = buf_s1d
    cdef double[:, ::1] S2d = buf_s2d
    cdef double[::1] xrow = buf_x
    cdef double[::1] meanb = buf_mean

    cdef double ll = 0.0, t, m, eta, w, wa, S0, S0d, S0j, frac, inv
    cdef Py_ssize_t ptr = 0, g, j, jn, e, off, k, n_zero
    cdef int a, b, d
    cdef Py_ssize_t head = n  # sentinel node

    nxt[head] = -1
    prv[head] = -1

    for g in range(n_groups):
        t = ev_times[g]
        off = ev_offsets[g]
        d = <int>(ev_offsets[g + 1] - off)

        while ptr < n and tstart[enter_order[ptr]] < t:
            j = enter_order[ptr]
            nxt[j] = nxt[head]
            prv[j] = head
            if nxt[head] != -1:
                prv[nxt[head]] = j
            nxt[head] = j
            ptr += 1

        # pass 1: prune dead intervals, cache rows and linear predictors;
        # unvaccinated members without covariates have eta = 0 exactly and
        # are pooled into n_zero to skip their exp() calls
        m = -np.inf
        n_zero = 0
        j = nxt[head]
        while j != -1:
            jn = nxt[j]
            if tstop[j] < t:
                nxt[prv[j]] = jn
                if jn != -1:
                    prv[jn] = prv[j]
            elif px == 0 and vacc[j] == 0:
                eta_buf[j] = 0.0
                n_zero += 1
            else:
                eta = 0.0
                if vacc[j]:
                    _model_row(kind, &aux[0], naux, t - vtime[j], &row_buf[j, 0], pm)
                    for a in range(pm):
                        eta += row_buf[j, a] * params[a]
                for a in range(px):
                    eta += X[j, a] * params[pm + a]
                if not isfinite(eta):
                    return ll, j
                eta_buf[j] = eta
                if eta > m:
                    m = eta
            j = jn
        if n_zero > 0 and m < 0.0:
            m = 0.0

        if efron:
            for k in range(d):
                is_tied[ev_members[off + k]] = 1

        # pass 2: weighted risk-set sums
        S0 = 0.0
        S0d = 0.0
        if want >= 1:
            for a in range(p):
                S1[a] = 0.0
                S1d[a] = 0.0
                for b in range(p):
                    S2[a, b] = 0.0
                    S2d[a, b] = 0.0
        if n_zero > 0:
            S0 += n_zero * exp(-m)
        j = nxt[head]
        while j != -1:
            if px == 0 and vacc[j] == 0:
                if efron and is_tied[j]:
                    S0d += exp(-m)
                j = nxt[j]
                continue
            w = exp(eta_buf[j] - m)
            S0 += w
            if want >= 1:
                if vacc[j]:
                    for a in range(pm):
                        xrow[a] = row_buf[j, a]
                else:
                    for a in range(pm):
                        xrow[a] = 0.0
                for a in range(px):
                    xrow[pm + a] = X[j, a]
                for a in range(p):
                    wa = w * xrow[a]
                    if wa != 0.0:
                        S1[a] += wa
                        for b in range(a, p):
                            S2[a, b] += wa * xrow[b]
            if efron and is_tied[j]:
                S0d += w
                if want >= 1:
                    if vacc[j]:
                        for a in range(pm):
                            xrow[a] = row_buf[j, a]
                    else:
                        for a in range(pm):
                            xrow[a] = 0.0
                    for a in range(px):
                        xrow[pm + a] = X[j, a]
                    for a in range(p):
                        wa = w * xrow[a]
                        if wa != 0.0:
                            S1d[a] += wa
                            for b in range(a, p):
                                S2d[a, b] += wa * xrow[b]
            j = nxt[j]

        # event contributions
        for k in range(d):
            e = ev_members[off + k]
            ll += eta_buf[e]
            if want >= 1:
                if vacc[e]:
                    for a in range(pm):
                        grad[a] += row_buf[e, a]
                for a in range(px):
                    grad[pm + a] += X[e, a]

        if efron:
            for k in range(d):
                frac = k / <double>d
                S0j = S0 - frac * S0d
                ll -= m + log(S0j)
                if want >= 1:
                    inv = 1.0 / S0j
                    for a in range(p):
                        meanb[a] = (S1[a] - frac * S1d[a]) * inv
                        grad[a] -= meanb[a]
                    for a in range(p):
                        for b in range(a, p):
                            hess[a, b] += (S2[a, b] - frac * S2d[a, b]) * inv \
                                - meanb[a] * meanb[b]
            for k in range(d):
                is_tied[ev_members[off + k]] = 0
        else:
            ll -= d * (m + log(S0))
            if want >= 1:
                inv = 1.0 / S0
                for a in range(p):
                    meanb[a] = S1[a] * inv
                    grad[a] -= d * meanb[a]
                for a in range(p):
                    for b in range(a, p):
                        hess[a, b] += d * (S2[a, b] * inv - meanb[a] * meanb[b])

    return ll, -1
