"""Trial records and counting-process reshaping.

Wide records carry one row per volunteer; :func:`reshape_counting_process`
turns them into start-stop risk intervals with a time-varying vaccination
status, censoring outcomes that fall inside the crossover blackout window
at the window start and emitting discontinuous pre/post-crossover
intervals for volunteers who complete crossover.

Conventions (all times are days since study initiation, ``.`` decimal,
UTF-8 CSV):

* a volunteer who never reaches the crossover interlude has no window
  (both ``xstart`` and ``xend`` missing);
* never-vaccinated volunteers get ``vacc_time = +inf``;
* placebo volunteers with a window measure time since vaccination from
  ``xend`` (end of blackout); original-vaccine volunteers from ``entry``;
* output rows are ordered by id, then interval start.
"""

import csv
import math
import warnings
from dataclasses import dataclass, replace

import numpy as np

RECORD_COLUMNS = ["id", "arm", "entry", "Xstart", "Xend", "eventtime", "status"]
INTERVAL_COLUMNS = ["id", "arm", "tstart", "tstop", "event",
                    "vacc_status", "vacc_time", "stratum"]


class ValidationError(ValueError):
    """One or more records violate the record invariants."""

    def __init__(self, problems):
        self.problems = list(problems)
        lines = "; ".join(f"id={i}: {msg}" for i, msg in self.problems)
        super().__init__(f"{len(self.problems)} invalid record(s): {lines}")


class SchemaError(ValueError):
    """A CSV file does not match the expected schema."""


@dataclass(frozen=True)
class ParticipantRecord:
    """One volunteer: randomization arm, follow-up window and outcome.

    ``entry`` is the day counted follow-up starts, ``xstart``/``xend``
    bracket the crossover blackout (both present or both absent) and
    ``eventtime`` is the day of the disease event (``status = 1``) or of
    censoring (``status = 0``).
    """

    id: int
    arm: int
    entry: float
    xstart: float | None
    xend: float | None
    eventtime: float
    status: int


@dataclass(frozen=True)
class RiskInterval:
    """One at-risk interval (tstart, tstop] in counting-process form."""

    id: int
    arm: int
    tstart: float
    tstop: float
    event: int
    vacc_status: int
    vacc_time: float
    stratum: int = 0


def validate(records):
    """Check every record invariant; return the records unchanged.

    Raises :class:`ValidationError` listing the id and violated rule for
    each bad row.
    """
    problems = []
    seen = set()
    for r in records:
        if r.id in seen:
            problems.append((r.id, "duplicate id"))
        seen.add(r.id)
        if r.arm not in (0, 1):
            problems.append((r.id, f"arm must be 0 or 1, got {r.arm}"))
        if r.status not in (0, 1):
            problems.append((r.id, f"status must be 0 or 1, got {r.status}"))
        if not (math.isfinite(r.entry) and r.entry >= 0):
            problems.append((r.id, f"entry must be finite and >= 0, got {r.entry}"))
        if not math.isfinite(r.eventtime):
            problems.append((r.id, f"eventtime must be finite, got {r.eventtime}"))
        elif r.eventtime <= r.entry:
            problems.append((r.id, "no positive risk time (eventtime <= entry)"))
        if (r.xstart is None) != (r.xend is None):
            problems.append((r.id, "incomplete crossover window (Xstart/Xend must "
                                   "both be present or both be absent)"))
        elif r.xstart is not None:
            if not (r.entry <= r.xstart < r.xend):
                problems.append((r.id, f"window must satisfy entry <= Xstart < Xend, "
                                       f"got ({r.xstart}, {r.xend})"))
            elif r.eventtime < r.xstart:
                problems.append((r.id, "outcome precedes the crossover window; such "
                                       "rows must have the window missing"))
    if problems:
        raise ValidationError(problems)
    return records


def records_to_arrays(records):
    """Column arrays (id, arm, entry, xstart, xend, eventtime, status); NaN = missing."""
    n = len(records)
    out = {
        "id": np.fromiter((r.id for r in records), dtype=np.int64, count=n),
        "arm": np.fromiter((r.arm for r in records), dtype=np.int64, count=n),
        "entry": np.fromiter((r.entry for r in records), dtype=float, count=n),
        "xstart": np.fromiter((math.nan if r.xstart is None else r.xstart
                               for r in records), dtype=float, count=n),
        "xend": np.fromiter((math.nan if r.xend is None else r.xend
                             for r in records), dtype=float, count=n),
        "eventtime": np.fromiter((r.eventtime for r in records), dtype=float, count=n),
        "status": np.fromiter((r.status for r in records), dtype=np.int64, count=n),
    }
    return out


@dataclass
class IntervalArrays:
    """Risk intervals as column arrays, the input to model fitting.

    ``covariates`` holds optional per-interval baseline covariates (same
    value on every interval of an id).
    """

    id: np.ndarray
    arm: np.ndarray
    tstart: np.ndarray
    tstop: np.ndarray
    event: np.ndarray
    vacc_status: np.ndarray
    vacc_time: np.ndarray
    stratum: np.ndarray
    covariates: np.ndarray | None = None

    def __len__(self):
        return len(self.tstart)

    @property
    def n_events(self):
        return int(self.event.sum())

    @property
    def n_covariates(self):
        return 0 if self.covariates is None else self.covariates.shape[1]

    @classmethod
    def from_intervals(cls, intervals, covariates=None):
        n = len(intervals)
        return cls(
            id=np.fromiter((iv.id for iv in intervals), dtype=np.int64, count=n),
            arm=np.fromiter((iv.arm for iv in intervals), dtype=np.int64, count=n),
            tstart=np.fromiter((iv.tstart for iv in intervals), dtype=float, count=n),
            tstop=np.fromiter((iv.tstop for iv in intervals), dtype=float, count=n),
            event=np.fromiter((iv.event for iv in intervals), dtype=np.int64, count=n),
            vacc_status=np.fromiter((iv.vacc_status for iv in intervals),
                                    dtype=np.int64, count=n),
            vacc_time=np.fromiter((iv.vacc_time for iv in intervals),
                                  dtype=float, count=n),
            stratum=np.fromiter((iv.stratum for iv in intervals),
                                dtype=np.int64, count=n),
            covariates=covariates,
        )

    def to_intervals(self):
        return [
            RiskInterval(int(self.id[i]), int(self.arm[i]), float(self.tstart[i]),
                         float(self.tstop[i]), int(self.event[i]),
                         int(self.vacc_status[i]), float(self.vacc_time[i]),
                         int(self.stratum[i]))
            for i in range(len(self))
        ]

    def censored_at(self, day):
        """Administratively censor every ongoing interval at ``day``.

        Intervals starting at or after ``day`` are dropped; intervals
        spanning ``day`` are cut there with no event.
        """
        keep = self.tstart < day
        cut = self.tstop > day
        tstop = np.where(cut, day, self.tstop)[keep]
        event = np.where(cut, 0, self.event)[keep]
        return IntervalArrays(
            id=self.id[keep], arm=self.arm[keep], tstart=self.tstart[keep],
            tstop=tstop, event=event.astype(np.int64),
            vacc_status=self.vacc_status[keep], vacc_time=self.vacc_time[keep],
            stratum=self.stratum[keep],
            covariates=None if self.covariates is None else self.covariates[keep],
        )


def reshape_arrays(cols, stratify_crossover=False):
    """Vectorized counting-process reshape from wide column arrays.

    Returns an :class:`IntervalArrays` ordered by (id, tstart).  Volunteers
    whose entire follow-up falls inside their blackout window contribute no
    rows and trigger a warning.
    """
    ids, arm = cols["id"], cols["arm"]
    entry, xstart, xend = cols["entry"], cols["xstart"], cols["xend"]
    eventtime, status = cols["eventtime"], cols["status"]

    has_window = ~np.isnan(xstart)
    in_window = has_window & (eventtime <= xend)  # outcome during blackout
    passed = has_window & (eventtime > xend)      # completed crossover

    # pre-crossover (or only) interval
    t1stop = np.where(has_window, xstart, eventtime)
    e1 = np.where(has_window & (in_window | passed), 0, status)
    vt = np.where(arm == 1, entry, np.where(has_window, xend, np.inf))

    first = dict(id=ids, arm=arm, tstart=entry, tstop=t1stop, event=e1,
                 vacc_status=arm.copy(), vacc_time=vt,
                 stratum=np.zeros(len(ids), dtype=np.int64))
    second = dict(id=ids[passed], arm=arm[passed], tstart=xend[passed],
                  tstop=eventtime[passed], event=status[passed],
                  vacc_status=np.ones(passed.sum(), dtype=np.int64),
                  vacc_time=vt[passed],
                  stratum=np.full(passed.sum(), 1 if stratify_crossover else 0,
                                  dtype=np.int64))

    stacked = {k: np.concatenate([first[k], second[k]]) for k in first}
    keep = stacked["tstart"] < stacked["tstop"]
    got_rows = np.unique(stacked["id"][keep])
    dropped = np.setdiff1d(ids, got_rows)
    if dropped.size:
        warnings.warn(
            f"{dropped.size} participant(s) with no positive risk time outside "
            f"the blackout window dropped: ids {dropped.tolist()}",
            stacklevel=2,
        )
    order = np.lexsort((stacked["tstart"][keep], stacked["id"][keep]))
    out = {k: v[keep][order] for k, v in stacked.items()}
    out["event"] = out["event"].astype(np.int64)
    return IntervalArrays(**out)


def reshape_counting_process(records, stratify_crossover=False):
    """Reshape validated wide records into a list of :class:`RiskInterval`.

    With ``stratify_crossover`` (open-label analyses), post-blackout
    intervals are assigned stratum 1 and all others stratum 0.
    """
    arrays = reshape_arrays(records_to_arrays(records), stratify_crossover)
    return arrays.to_intervals()


def format_day(x):
    """Shortest exact decimal for a day value; 'inf' for +infinity."""
    if math.isinf(x):
        return "inf"
    return np.format_float_positional(x, unique=True, trim="-")


def _parse_float(text, line_no, column):
    try:
        return float(text)
    except ValueError:
        raise SchemaError(f"line {line_no}: cannot parse {column}={text!r}") from None


def _parse_int(text, line_no, column):
    try:
        return int(text)
    except ValueError:
        raise SchemaError(f"line {line_no}: cannot parse {column}={text!r}") from None


def read_records(path):
    """Read wide records from CSV (header exactly ``id,arm,entry,Xstart,Xend,eventtime,status``)."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise SchemaError("empty file: missing header")
        if header != RECORD_COLUMNS:
            missing = [c for c in RECORD_COLUMNS if c not in header]
            if missing:
                raise SchemaError(f"missing column(s) {missing}; "
                                  f"expected header {RECORD_COLUMNS}")
            raise SchemaError(f"expected header {RECORD_COLUMNS}, got {header}")
        records = []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(RECORD_COLUMNS):
                raise SchemaError(f"line {line_no}: expected "
                                  f"{len(RECORD_COLUMNS)} fields, got {len(row)}")
            records.append(ParticipantRecord(
                id=_parse_int(row[0], line_no, "id"),
                arm=_parse_int(row[1], line_no, "arm"),
                entry=_parse_float(row[2], line_no, "entry"),
                xstart=None if row[3] == "" else _parse_float(row[3], line_no, "Xstart"),
                xend=None if row[4] == "" else _parse_float(row[4], line_no, "Xend"),
                eventtime=_parse_float(row[5], line_no, "eventtime"),
                status=_parse_int(row[6], line_no, "status"),
            ))
    return records


def write_records(records, fh_or_path):
    """Write wide records as CSV (empty cell = missing window)."""
    def _write(fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RECORD_COLUMNS)
        for r in records:
            w.writerow([
                r.id, r.arm, format_day(r.entry),
                "" if r.xstart is None else format_day(r.xstart),
                "" if r.xend is None else format_day(r.xend),
                format_day(r.eventtime), r.status,
            ])

    if hasattr(fh_or_path, "write"):
        _write(fh_or_path)
    else:
        with open(fh_or_path, "w", newline="", encoding="utf-8") as fh:
            _write(fh)


def read_intervals(path):
    """Read risk intervals from long CSV (``inf`` literal for +infinity)."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise SchemaError("empty file: missing header")
        if header != INTERVAL_COLUMNS:
            missing = [c for c in INTERVAL_COLUMNS if c not in header]
            if missing:
                raise SchemaError(f"missing column(s) {missing}; "
                                  f"expected header {INTERVAL_COLUMNS}")
            raise SchemaError(f"expected header {INTERVAL_COLUMNS}, got {header}")
        intervals = []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(INTERVAL_COLUMNS):
                raise SchemaError(f"line {line_no}: expected "
                                  f"{len(INTERVAL_COLUMNS)} fields, got {len(row)}")
            intervals.append(RiskInterval(
                id=_parse_int(row[0], line_no, "id"),
                arm=_parse_int(row[1], line_no, "arm"),
                tstart=_parse_float(row[2], line_no, "tstart"),
                tstop=_parse_float(row[3], line_no, "tstop"),
                event=_parse_int(row[4], line_no, "event"),
                vacc_status=_parse_int(row[5], line_no, "vacc_status"),
                vacc_time=_parse_float(row[6], line_no, "vacc_time"),
                stratum=_parse_int(row[7], line_no, "stratum"),
            ))
    return intervals


def write_intervals(intervals, fh_or_path):
    """Write risk intervals as long CSV, ordered as given."""
    if isinstance(intervals, IntervalArrays):
        intervals = intervals.to_intervals()

    def _write(fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(INTERVAL_COLUMNS)
        for iv in intervals:
            w.writerow([
                iv.id, iv.arm, format_day(iv.tstart), format_day(iv.tstop),
                iv.event, iv.vacc_status, format_day(iv.vacc_time), iv.stratum,
            ])

    if hasattr(fh_or_path, "write"):
        _write(fh_or_path)
    else:
        with open(fh_or_path, "w", newline="", encoding="utf-8") as fh:
            _write(fh)
