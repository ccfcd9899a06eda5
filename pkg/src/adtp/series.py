"""Loading, repair, normalization, and windowing of uni-variate series.

A series enters as timestamped statuses with possible holes (absent rows or
empty values). Repair fills every hole: short gaps by linear interpolation,
long gaps slot-by-slot from the nearest days that observed the same
time-of-day, which preserves daily periodicity for the spectral stage.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DataError

# points per day and the linear-interpolation cutoff per sampling granularity
PERIOD_BY_GRANULARITY = {"minute": 1440, "hour": 24}
MAX_LINEAR_GAP_BY_GRANULARITY = {"minute": 7, "hour": 3}

# bounded outward search when filling from neighboring days
CROSS_PERIOD_SEARCH = 7


@dataclass
class TimeSeries:
    """Equally spaced real-valued statuses with optional anomaly labels.

    ``values`` may contain NaN for points that still need repair;
    ``missing_mask`` records which points were not originally observed
    (it stays set after repair, for audit).
    """

    values: np.ndarray
    timestamps: np.ndarray
    labels: np.ndarray | None = None
    missing_mask: np.ndarray = field(default=None)  # type: ignore[assignment]
    granularity: str = "minute"
    series_id: str = ""

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.timestamps = np.asarray(self.timestamps, dtype=np.int64)
        if self.missing_mask is None:
            self.missing_mask = np.isnan(self.values)
        self.missing_mask = np.asarray(self.missing_mask, dtype=bool)
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=bool)
            if len(self.labels) != len(self.values):
                raise DataError("labels and values length mismatch")
        if len(self.missing_mask) != len(self.values):
            raise DataError("missing_mask and values length mismatch")
        if len(self.timestamps) != len(self.values):
            raise DataError("timestamps and values length mismatch")

    def __len__(self) -> int:
        return len(self.values)

    @property
    def period(self) -> int:
        return PERIOD_BY_GRANULARITY[self.granularity]

    @property
    def max_linear_gap(self) -> int:
        return MAX_LINEAR_GAP_BY_GRANULARITY[self.granularity]


@dataclass(frozen=True)
class NormalizationParams:
    mean: float
    std: float  # strictly positive

    def apply(self, values: np.ndarray) -> np.ndarray:
        return (values - self.mean) / self.std

    def invert(self, values: np.ndarray) -> np.ndarray:
        return values * self.std + self.mean


@dataclass(frozen=True)
class Segment:
    """Window of ``window`` consecutive statuses ending at ``end_index``."""

    points: np.ndarray
    end_index: int


@dataclass(frozen=True)
class SegmentSequence:
    """Run of consecutive segments plus the true next status per step."""

    segments: list[Segment]
    next_values: np.ndarray

    def __len__(self) -> int:
        return len(self.segments)


def fill_missing(series: TimeSeries, max_linear_gap: int | None = None,
                 period: int | None = None) -> TimeSeries:
    """Fill every absent point; returns a new gap-free series.

    Gaps of length <= max_linear_gap are linearly interpolated between the
    bounding observed statuses. Longer gaps (and gaps touching the series
    head or tail) are filled per slot from the same time-of-day in the
    nearest preceding and following days that observed that slot, searching
    at most CROSS_PERIOD_SEARCH days outward on each side. One-sided hits
    are copied; no hit on either side raises "irreparable gap".
    """
    if max_linear_gap is None:
        max_linear_gap = series.max_linear_gap
    if period is None:
        period = series.period

    values = series.values.copy()
    mask = series.missing_mask.copy()
    holes = np.isnan(values)
    if not holes.any():
        return replace(series, values=values, missing_mask=mask)

    present = ~holes  # originally observed points are the only fill sources
    n = len(values)
    hole_idx = np.flatnonzero(holes)

    # maximal runs of consecutive holes
    run_starts = hole_idx[np.r_[True, np.diff(hole_idx) > 1]]
    run_ends = hole_idx[np.r_[np.diff(hole_idx) > 1, True]]

    for start, end in zip(run_starts, run_ends):
        length = end - start + 1
        interior = start > 0 and end < n - 1
        if length <= max_linear_gap and interior:
            left, right = values[start - 1], values[end + 1]
            t = np.arange(1, length + 1) / (length + 1)
            values[start:end + 1] = left + (right - left) * t
            continue
        for i in range(start, end + 1):
            prev_j = -1
            for j in range(i - period, i - period * CROSS_PERIOD_SEARCH - 1, -period):
                if j < 0:
                    break
                if present[j]:
                    prev_j = j
                    break
            next_j = -1
            for j in range(i + period, i + period * CROSS_PERIOD_SEARCH + 1, period):
                if j >= n:
                    break
                if present[j]:
                    next_j = j
                    break
            if prev_j >= 0 and next_j >= 0:
                frac = (i - prev_j) / (next_j - prev_j)
                values[i] = values[prev_j] + (values[next_j] - values[prev_j]) * frac
            elif prev_j >= 0:
                values[i] = values[prev_j]
            elif next_j >= 0:
                values[i] = values[next_j]
            else:
                raise DataError(
                    f"irreparable gap: no observed value at slot of index {i} "
                    f"within {CROSS_PERIOD_SEARCH} periods on either side")

    mask |= holes
    return replace(series, values=values, missing_mask=mask)


def zscore(series: TimeSeries, train_len: int | None = None
           ) -> tuple[TimeSeries, NormalizationParams]:
    """Normalize to zero mean / unit population std.

    Statistics come from the first ``train_len`` points only (default: the
    first half) so the held-out half never leaks into them; the transform is
    applied to the whole series.
    """
    values = series.values
    if np.isnan(values).any():
        raise DataError("zscore requires a gap-free series")
    if train_len is None:
        train_len = len(values) // 2
    train = values[:train_len]
    mean = float(np.mean(train))
    std = float(np.std(train))  # population std
    if std <= 0.0:
        raise DataError("constant series: standard deviation is zero")
    params = NormalizationParams(mean=mean, std=std)
    return replace(series, values=params.apply(values)), params


def segment_series(series: TimeSeries, window: int) -> list[Segment]:
    """Slide a length-``window`` window with step 1 over the series."""
    mat = segment_matrix(series.values, window)
    return [Segment(points=mat[i], end_index=window - 1 + i)
            for i in range(mat.shape[0])]


def segment_matrix(values: np.ndarray, window: int) -> np.ndarray:
    """All sliding windows as a (n - window + 1, window) read-only view."""
    n = len(values)
    if n < window:
        raise DataError(f"series too short: {n} points < window {window}")
    view = np.lib.stride_tricks.sliding_window_view(values, window)
    view.flags.writeable = False
    return view


def make_sequences(segments: list[Segment], seq_len: int,
                   series: TimeSeries) -> list[SegmentSequence]:
    """Group consecutive segments into non-overlapping runs of ``seq_len``.

    Every segment must have a successor status in ``series`` (the training
    target); pass ``segments[:-1]`` when segmenting a full series. The
    trailing run shorter than ``seq_len`` is kept, so that no time stamp is
    dropped.
    """
    if len(segments) < seq_len:
        raise DataError(f"need at least {seq_len} segments, got {len(segments)}")
    n = len(series)
    for prev, cur in zip(segments, segments[1:]):
        if cur.end_index != prev.end_index + 1:
            raise DataError("segments are not consecutive")
    if segments[-1].end_index + 1 >= n:
        raise DataError("last segment has no successor status")
    out = []
    for start in range(0, len(segments), seq_len):
        chunk = segments[start:start + seq_len]
        nxt = series.values[[s.end_index + 1 for s in chunk]]
        out.append(SegmentSequence(segments=chunk, next_values=nxt))
    return out


# ---------------------------------------------------------------------------
# CSV ingestion / dumps
# ---------------------------------------------------------------------------

_KPI_HEADER = ["timestamp", "value", "label", "KPI ID"]
_YAHOO_HEADER = ["timestamp", "value", "is_anomaly"]
_REPAIRED_HEADER = ["timestamp", "value", "label", "filled"]


def _detect_format(header: list[str]) -> str:
    stripped = [h.strip() for h in header]
    if stripped == _KPI_HEADER:
        return "kpi"
    if stripped == _YAHOO_HEADER:
        return "yahoo"
    if stripped == _REPAIRED_HEADER:
        return "repaired"
    raise DataError(f"unrecognized CSV header: {header}")


def _parse_rows(path: str, fmt: str, reader) -> dict[str, list[tuple]]:
    by_id: dict[str, list[tuple]] = {}
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        try:
            ts = int(row[0])
            val = float(row[1]) if row[1].strip() != "" else float("nan")
            if fmt == "kpi":
                label = bool(int(row[2])) if row[2].strip() else False
                sid = row[3].strip()
                filled = False
            elif fmt == "yahoo":
                label = bool(int(row[2])) if row[2].strip() else False
                sid = ""
                filled = False
            else:  # repaired
                label = bool(int(row[2])) if row[2].strip() else False
                sid = ""
                filled = bool(int(row[3]))
        except (ValueError, IndexError) as exc:
            raise DataError(f"{path}:{lineno}: malformed CSV row: {exc}") from exc
        by_id.setdefault(sid, []).append((ts, val, label, filled))
    return by_id


def load_series_csv(path: str, granularity: str | None = None
                    ) -> dict[str, TimeSeries]:
    """Load one or more series from a KPI-, Yahoo-, or repaired-format CSV.

    Rows absent at the expected timestamp stride are inserted as missing
    points. Returns series keyed (and sorted) by series id.
    """
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        fmt = _detect_format(header)
        by_id = _parse_rows(path, fmt, reader)

    out: dict[str, TimeSeries] = {}
    for sid in sorted(by_id):
        rows = sorted(by_id[sid])
        ts = np.array([r[0] for r in rows], dtype=np.int64)
        if len(ts) < 2:
            raise DataError(f"{path}: series {sid!r} has fewer than 2 rows")
        diffs = np.diff(ts)
        if (diffs <= 0).any():
            raise DataError(f"{path}: series {sid!r} has duplicate timestamps")
        stride = int(diffs.min())
        if (diffs % stride != 0).any():
            raise DataError(f"{path}: series {sid!r} timestamps are not on a "
                            f"constant stride of {stride}")
        if granularity is None:
            granularity = {60: "minute", 3600: "hour"}.get(stride, "minute")
        n = (int(ts[-1]) - int(ts[0])) // stride + 1
        values = np.full(n, np.nan)
        labels = np.zeros(n, dtype=bool)
        mask = np.ones(n, dtype=bool)
        pos = (ts - ts[0]) // stride
        for p, row in zip(pos, rows):
            values[p] = row[1]
            labels[p] = row[2]
            mask[p] = np.isnan(row[1]) or row[3]
        full_ts = ts[0] + stride * np.arange(n, dtype=np.int64)
        out[sid] = TimeSeries(values=values, timestamps=full_ts, labels=labels,
                              missing_mask=mask, granularity=granularity,
                              series_id=sid)
    return out


def dump_repaired_csv(path: str, series: TimeSeries) -> None:
    """Audit dump: timestamp,value,label,filled with filled marking repairs."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_REPAIRED_HEADER)
        labels = series.labels if series.labels is not None else np.zeros(len(series), bool)
        for ts, val, lab, fil in zip(series.timestamps, series.values,
                                     labels, series.missing_mask):
            writer.writerow([int(ts), repr(float(val)), int(lab), int(fil)])
