"""Naive reference evaluation of the partial likelihood.

Deliberately plain: for every event time the risk set is rebuilt by
scanning all intervals and the sums are formed with ordinary ``math.exp``,
no centering, no sweep.  Kept only for differential testing of the fast
kernels; quadratic in the data size.
"""

import math

import numpy as np

from ._kernels import model_rows


def _row(data, model, j, t):
    p = model.n_params + data.n_covariates
    row = [0.0] * p
    if data.vacc_status[j]:
        block = model_rows(model.kind, model.aux, model.n_params,
                           np.array([t - data.vacc_time[j]]))[0]
        for a in range(model.n_params):
            row[a] = float(block[a])
    for k in range(data.n_covariates):
        row[model.n_params + k] = float(data.covariates[j, k])
    return row


def loglik_naive(data, model, params, ties="breslow"):
    """Log partial likelihood by direct enumeration."""
    params = [float(v) for v in params]
    groups = {}
    for j in range(len(data)):
        if data.event[j]:
            key = (int(data.stratum[j]), float(data.tstop[j]))
            groups.setdefault(key, []).append(j)

    total = 0.0
    for (stratum, t), members in sorted(groups.items()):
        risk = [j for j in range(len(data))
                if data.stratum[j] == stratum
                and data.tstart[j] < t <= data.tstop[j]]
        weights = []
        for j in risk:
            eta = sum(a * b for a, b in zip(_row(data, model, j, t), params))
            weights.append(math.exp(eta))
        s0 = sum(weights)
        tied = sum(math.exp(sum(a * b for a, b in
                                zip(_row(data, model, j, t), params)))
                   for j in members)
        d = len(members)
        for j in members:
            eta = sum(a * b for a, b in zip(_row(data, model, j, t), params))
            total += eta
        if ties == "efron":
            for k in range(d):
                total -= math.log(s0 - (k / d) * tied)
        else:
            total -= d * math.log(s0)
    return total
