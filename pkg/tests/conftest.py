import numpy as np
import pytest

from vecross import trialdata


def worked_example_records():
    """The ten-volunteer worked example used throughout the docs and tests."""
    rows = [
        (1, 0, 35, 65, 95, 370, 0),
        (2, 1, 45, 80, 110, 400, 0),
        (3, 0, 55, None, None, 150, 0),
        (4, 1, 60, 170, 200, 310, 1),
        (5, 0, 65, None, None, 80, 1),
        (6, 1, 80, 190, 210, 410, 0),
        (7, 0, 85, 215, 245, 420, 0),
        (8, 1, 70, None, None, 90, 1),
        (9, 0, 58, 160, 190, 180, 1),
        (10, 1, 71, 160, 190, 166, 0),
    ]
    return [trialdata.ParticipantRecord(*r) for r in rows]


# reference long-format reshape of the worked example:
# (id, arm, tstart, tstop, event, vacc_status, vacc_time)
WORKED_EXAMPLE_LONG = [
    (1, 0, 35, 65, 0, 0, 95),
    (1, 0, 95, 370, 0, 1, 95),
    (2, 1, 45, 80, 0, 1, 45),
    (2, 1, 110, 400, 0, 1, 45),
    (3, 0, 55, 150, 0, 0, float("inf")),
    (4, 1, 60, 170, 0, 1, 60),
    (4, 1, 200, 310, 1, 1, 60),
    (5, 0, 65, 80, 1, 0, float("inf")),
    (6, 1, 80, 190, 0, 1, 80),
    (6, 1, 210, 410, 0, 1, 80),
    (7, 0, 85, 215, 0, 0, 245),
    (7, 0, 245, 420, 0, 1, 245),
    (8, 1, 70, 90, 1, 1, 70),
    (9, 0, 58, 160, 0, 0, 190),
    (10, 1, 71, 160, 0, 1, 71),
]

# fitted log-linear decay on the worked example (slope per day)
WORKED_EXAMPLE_ESTIMATES = (-0.82335, 0.02649)


@pytest.fixture
def example_records():
    return worked_example_records()


@pytest.fixture
def example_data(example_records):
    intervals = trialdata.reshape_counting_process(example_records)
    return trialdata.IntervalArrays.from_intervals(intervals)


def random_interval_data(rng, n, with_covariates=False, n_strata=1,
                         force_ties=False):
    """Small random counting-process dataset for differential tests."""
    tstart = rng.uniform(0, 50, n)
    tstop = tstart + rng.uniform(1, 100, n)
    if force_ties:
        tstop = np.maximum(np.round(tstop), tstart + 0.5)
    vacc = (rng.uniform(size=n) < 0.6).astype(np.int64)
    return trialdata.IntervalArrays(
        id=np.arange(1, n + 1),
        arm=vacc.copy(),
        tstart=tstart,
        tstop=tstop,
        event=(rng.uniform(size=n) < 0.5).astype(np.int64),
        vacc_status=vacc,
        vacc_time=np.where(vacc == 1, tstart - rng.uniform(0, 30, n), np.inf),
        stratum=rng.integers(0, n_strata, n),
        covariates=rng.normal(size=(n, 2)) if with_covariates else None,
    )
