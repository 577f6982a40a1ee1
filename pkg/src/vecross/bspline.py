"""Clamped cubic B-spline basis evaluation.

Implements the Cox-de Boor span recursion for degree 3 with replicated
boundary knots.  The compiled kernel carries a line-for-line C translation
of :func:`design_matrix`; the two must stay in sync so that backends agree
to rounding error.
"""

import numpy as np

DEGREE = 3


def knot_vector(breakpoints):
    """Full clamped knot vector: boundary knots replicated DEGREE times."""
    bp = np.asarray(breakpoints, dtype=float)
    if bp.ndim != 1 or bp.size < 2:
        raise ValueError("need at least two breakpoints")
    if np.any(np.diff(bp) <= 0):
        raise ValueError("breakpoints must be strictly increasing")
    return np.concatenate([np.repeat(bp[0], DEGREE), bp, np.repeat(bp[-1], DEGREE)])


def n_basis(knots):
    return len(knots) - DEGREE - 1


def find_spans(knots, s):
    """Largest span index i in [DEGREE, L-1] with knots[i] <= s."""
    L = n_basis(knots)
    spans = np.searchsorted(knots, s, side="right") - 1
    return np.clip(spans, DEGREE, L - 1)


def design_matrix(s, knots):
    """Dense basis matrix of shape (len(s), L); s is clamped to the domain."""
    knots = np.asarray(knots, dtype=float)
    s = np.atleast_1d(np.asarray(s, dtype=float))
    L = n_basis(knots)
    s = np.clip(s, knots[DEGREE], knots[L])
    spans = find_spans(knots, s)

    m = len(s)
    vals = np.zeros((m, DEGREE + 1))
    left = np.zeros((m, DEGREE + 1))
    right = np.zeros((m, DEGREE + 1))
    vals[:, 0] = 1.0
    for j in range(1, DEGREE + 1):
        left[:, j] = s - knots[spans + 1 - j]
        right[:, j] = knots[spans + j] - s
        saved = np.zeros(m)
        for r in range(j):
            temp = vals[:, r] / (right[:, r + 1] + left[:, j - r])
            vals[:, r] = saved + right[:, r + 1] * temp
            saved = left[:, j - r] * temp
        vals[:, j] = saved

    out = np.zeros((m, L))
    cols = spans[:, None] - DEGREE + np.arange(DEGREE + 1)[None, :]
    np.put_along_axis(out, cols, vals, axis=1)
    return out
