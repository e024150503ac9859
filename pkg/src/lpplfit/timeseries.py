"""Series ingestion, calendar conversion, smoothing and windowing.

All times are decimal years: ``year + (day_of_year - 1) / days_in_year``.
"""
from __future__ import annotations

import csv
import datetime as _dt
import io
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import (
    EmptyInputError,
    InsufficientDataError,
    ParseError,
    ValidationError,
)

#: One more than the seven model parameters.
MIN_OBS = 8


def _days_in_year(year: int) -> int:
    return 366 if _dt.date(year, 12, 31).timetuple().tm_yday == 366 else 365


def parse_date(value: str | _dt.date) -> _dt.date:
    """Accept a ``date`` (or ``datetime``) or an ISO-8601 ``yyyy-mm-dd`` string."""
    if isinstance(value, _dt.datetime):
        return value.date()
    if isinstance(value, _dt.date):
        return value
    try:
        return _dt.date.fromisoformat(str(value).strip())
    except ValueError as exc:
        raise ValidationError(f"invalid ISO date {value!r}: {exc}") from None


def to_decimal_years(date: str | _dt.date) -> float:
    """Convert a calendar date to decimal years.

    >>> to_decimal_years("2000-01-01")
    2000.0
    """
    d = parse_date(date)
    doy = d.timetuple().tm_yday
    return d.year + (doy - 1) / _days_in_year(d.year)


def from_decimal_years(t: float) -> _dt.date:
    """Nearest calendar date to a decimal-year timestamp (inverse of :func:`to_decimal_years`)."""
    year = int(np.floor(t))
    offset = int(round((t - year) * _days_in_year(year)))
    return _dt.date(year, 1, 1) + _dt.timedelta(days=offset)


@dataclass(frozen=True)
class Window:
    """Closed fitting interval ``[t1, t2]`` in decimal years."""

    t1: float
    t2: float

    def __post_init__(self):
        if not (np.isfinite(self.t1) and np.isfinite(self.t2)):
            raise ValidationError("window bounds must be finite")
        if not self.t1 < self.t2:
            raise ValidationError(f"window needs t1 < t2, got ({self.t1}, {self.t2})")

    @property
    def length(self) -> float:
        return self.t2 - self.t1


@dataclass(frozen=True, eq=False)
class TimeSeries:
    """Immutable univariate series on a decimal-year axis.

    ``dates`` is optional calendar metadata kept alongside ``times`` so that
    outputs can re-emit the original dates.
    """

    times: np.ndarray
    values: np.ndarray
    label: str = ""
    dates: tuple[_dt.date, ...] | None = field(default=None, repr=False)

    def __post_init__(self):
        times = np.array(self.times, dtype=float)
        values = np.array(self.values, dtype=float)
        if times.ndim != 1 or values.ndim != 1:
            raise ValidationError("times and values must be one-dimensional")
        if times.size == 0:
            raise EmptyInputError("series is empty")
        if times.size != values.size:
            raise ValidationError(
                f"times ({times.size}) and values ({values.size}) differ in length"
            )
        if not np.all(np.isfinite(times)):
            raise ValidationError("non-finite timestamp")
        if not np.all(np.isfinite(values)):
            raise ValidationError("non-finite value")
        if np.any(np.diff(times) <= 0):
            raise ValidationError("times must be strictly increasing without duplicates")
        if self.dates is not None and len(self.dates) != times.size:
            raise ValidationError("dates metadata does not match series length")
        times.flags.writeable = False
        values.flags.writeable = False
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return self.times.size

    def __eq__(self, other):
        if not isinstance(other, TimeSeries):
            return NotImplemented
        return (
            np.array_equal(self.times, other.times)
            and np.array_equal(self.values, other.values)
            and self.label == other.label
        )

    @property
    def spacing(self) -> float:
        """Median gap between consecutive observations (years)."""
        if len(self) < 2:
            return 0.0
        return float(np.median(np.diff(self.times)))

    def take(self, index) -> "TimeSeries":
        dates = None
        if self.dates is not None:
            dates = tuple(np.asarray(self.dates, dtype=object)[index])
        return TimeSeries(self.times[index], self.values[index], self.label, dates)

    def calendar_dates(self) -> list[_dt.date]:
        if self.dates is not None:
            return list(self.dates)
        return [from_decimal_years(t) for t in self.times]


@dataclass(frozen=True)
class ColumnSpec:
    date_col: str = "date"
    value_col: str = "value"
    delimiter: str = ","


def parse_csv(text: str | Iterable[str], config: ColumnSpec | None = None, label: str = "") -> TimeSeries:
    """Read a delimited file with a header row into a :class:`TimeSeries`.

    Rows are sorted by date; duplicate dates are rejected. Line numbers in
    errors count the header as line 1.
    """
    config = config or ColumnSpec()
    stream = io.StringIO(text) if isinstance(text, str) else text
    reader = csv.reader(stream, delimiter=config.delimiter)
    try:
        header = next(reader)
    except StopIteration:
        raise EmptyInputError("input has no header row") from None
    header = [h.strip() for h in header]
    for col in (config.date_col, config.value_col):
        if col not in header:
            raise ParseError(f"column {col!r} not found in header {header}", line=1)
    di, vi = header.index(config.date_col), header.index(config.value_col)

    rows: list[tuple[_dt.date, float]] = []
    for row in reader:
        line = reader.line_num
        if not row or all(not cell.strip() for cell in row):
            continue
        if len(row) <= max(di, vi):
            raise ParseError(f"expected at least {max(di, vi) + 1} fields, got {len(row)}", line)
        try:
            d = _dt.date.fromisoformat(row[di].strip())
        except ValueError:
            raise ParseError(f"bad date {row[di]!r}", line) from None
        try:
            v = float(row[vi])
        except ValueError:
            raise ParseError(f"bad value {row[vi]!r}", line) from None
        if not np.isfinite(v):
            raise ParseError(f"non-finite value {row[vi]!r}", line)
        rows.append((d, v))

    if not rows:
        raise EmptyInputError("input has a header but no data rows")
    rows.sort(key=lambda r: r[0])
    for (a, _), (b, _) in zip(rows, rows[1:]):
        if a == b:
            raise ValidationError(f"duplicate date {a.isoformat()}")
    dates = tuple(d for d, _ in rows)
    return TimeSeries(
        [to_decimal_years(d) for d in dates], [v for _, v in rows], label, dates
    )


def format_csv(series: TimeSeries) -> str:
    """Emit ``date,decimal_year,value`` rows, readable back by :func:`parse_csv`."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["date", "decimal_year", "value"])
    for d, t, v in zip(series.calendar_dates(), series.times, series.values):
        writer.writerow([d.isoformat(), repr(float(t)), repr(float(v))])
    return buf.getvalue()


def moving_average(series: TimeSeries, window_len: int = 13) -> TimeSeries:
    """Trailing mean over ``window_len`` observations.

    Output point ``i`` averages inputs ``i - window_len + 1 .. i`` and keeps the
    timestamp of input ``i``, so no value depends on later observations.
    """
    if int(window_len) != window_len or window_len < 1:
        raise ValidationError(f"window_len must be a positive integer, got {window_len}")
    window_len = int(window_len)
    if len(series) < window_len:
        raise InsufficientDataError(
            f"moving average of length {window_len} needs at least that many points, got {len(series)}"
        )
    means = sliding_window_view(series.values, window_len).mean(axis=1)
    return TimeSeries(
        series.times[window_len - 1:],
        means,
        series.label,
        None if series.dates is None else series.dates[window_len - 1:],
    )


def slice_window(series: TimeSeries, window: Window, min_obs: int = MIN_OBS) -> TimeSeries:
    """Observations with ``t1 <= t <= t2``."""
    mask = (series.times >= window.t1) & (series.times <= window.t2)
    n = int(mask.sum())
    if n < min_obs:
        raise InsufficientDataError(
            f"window [{window.t1:.5f}, {window.t2:.5f}] selects {n} observations, need {min_obs}"
        )
    return series.take(np.flatnonzero(mask))


def from_arrays(times: Sequence[float], values: Sequence[float], label: str = "") -> TimeSeries:
    return TimeSeries(np.asarray(times, float), np.asarray(values, float), label)
