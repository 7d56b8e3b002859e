"""Historian export parsing and the uniform per-minute OP/PV grid.

Raw exports are delimited text tables with a ``timestamp,value`` header.
Parsing tolerates bad rows (collected as diagnostics), truncates stamps
to the minute, sorts, and collapses duplicate minutes keep-last. The
uniform grid covers every minute between the first and last stamp; gaps
are filled by carrying the last observation forward, and minutes before
the first observation are filled backward from it. Each filled sample is
flagged so downstream stages can tell measurement from imputation.

The canonical on-disk form is a comma-separated table
``timestamp,op,pv,op_fill,pv_fill`` with ISO-8601 minute stamps and fill
tokens ``obs`` / ``ffill`` / ``bfill``.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from typing import Sequence

import numpy as np

from .errors import (
    EmptyInput,
    IoFailure,
    LengthMismatch,
    NonNumericValue,
    UnparseableTimestamp,
)

MINUTE = timedelta(minutes=1)

# fill_mask codes
OBSERVED = 0
FORWARD_FILLED = 1
BACKWARD_FILLED = 2

FILL_TOKENS = {OBSERVED: "obs", FORWARD_FILLED: "ffill", BACKWARD_FILLED: "bfill"}
FILL_CODES = {token: code for code, token in FILL_TOKENS.items()}

_DAYFIRST_FORMATS = (
    "%d/%m/%Y %H:%M:%S",
    "%d/%m/%Y %H:%M",
)


@dataclass
class ParseDiagnostic:
    """One rejected input row: line number, reason class, raw text."""

    line: int
    reason: str
    text: str


@dataclass
class RawSeries:
    """Sorted, duplicate-free point series for a single signal.

    ``timestamps`` are naive minute-resolution datetimes, strictly
    increasing; ``values`` are finite float64.
    """

    timestamps: list[datetime]
    values: np.ndarray
    signal_kind: str
    unit: str = ""
    diagnostics: list[ParseDiagnostic] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.timestamps)


@dataclass
class UniformSeries:
    """Gap-free per-minute OP/PV record set on a shared time axis.

    The implied axis is ``t0, t0 + 1 min, ...`` with one entry per array
    element. ``op_fill`` / ``pv_fill`` hold the per-sample fill codes;
    backward-filled samples can only form a contiguous prefix.
    """

    t0: datetime
    op: np.ndarray
    pv: np.ndarray
    op_fill: np.ndarray
    pv_fill: np.ndarray
    step: timedelta = MINUTE

    def __post_init__(self) -> None:
        if not (len(self.op) == len(self.pv) == len(self.op_fill) == len(self.pv_fill)):
            raise LengthMismatch(
                f"op/pv/fill lengths disagree: {len(self.op)}/{len(self.pv)}"
            )

    def __len__(self) -> int:
        return len(self.op)

    def minute(self, index: int) -> datetime:
        return self.t0 + index * self.step

    def timestamps(self) -> list[datetime]:
        return [self.t0 + i * self.step for i in range(len(self))]


def _parse_timestamp(text: str) -> datetime:
    """Parse ISO-8601 or day-first DD/MM/YYYY stamps, truncated to the minute.

    Ambiguous slash forms are resolved day-first; timezone offsets are
    dropped (naive local time).
    """
    text = text.strip()
    try:
        ts = datetime.fromisoformat(text)
    except ValueError:
        ts = None
    if ts is None:
        for fmt in _DAYFIRST_FORMATS:
            try:
                ts = datetime.strptime(text, fmt)
                break
            except ValueError:
                continue
    if ts is None:
        raise ValueError(f"unrecognized timestamp: {text!r}")
    if ts.tzinfo is not None:
        ts = ts.replace(tzinfo=None)
    return ts.replace(second=0, microsecond=0)


def _detect_delimiter(header_line: str) -> str:
    return "\t" if "\t" in header_line else ","


def _as_text_lines(source) -> list[str]:
    """Return the lines of a path, raw bytes/str content, or file object."""
    if isinstance(source, os.PathLike):
        try:
            with open(source, "r", encoding="utf-8") as fh:
                return fh.read().splitlines()
        except OSError as exc:
            raise IoFailure(str(exc)) from exc
    if isinstance(source, bytes):
        return source.decode("utf-8").splitlines()
    if isinstance(source, str):
        return source.splitlines()
    if hasattr(source, "read"):
        data = source.read()
        if isinstance(data, bytes):
            data = data.decode("utf-8")
        return data.splitlines()
    raise IoFailure(f"unsupported source type: {type(source).__name__}")


def parse_raw(source, signal_kind: str, unit: str = "") -> RawSeries:
    """Parse one delimited export (header ``timestamp,value``) into a RawSeries.

    Bad rows are recorded as diagnostics rather than aborting the parse;
    the parse fails only when nothing usable remains. Rows are stable
    sorted by minute-truncated timestamp and duplicate minutes collapse
    to the last occurrence in file order.
    """
    lines = [ln for ln in _as_text_lines(source) if ln.strip()]
    if not lines:
        raise EmptyInput("no rows in input")

    delim = _detect_delimiter(lines[0])
    header = [h.strip().lower() for h in lines[0].split(delim)]
    try:
        ts_col = header.index("timestamp")
        val_col = header.index("value")
    except ValueError as exc:
        raise EmptyInput(f"header must name timestamp and value columns, got {header}") from exc

    points: list[tuple[datetime, float]] = []
    diagnostics: list[ParseDiagnostic] = []
    saw_timestamp_failure = False
    for lineno, line in enumerate(lines[1:], start=2):
        cells = line.split(delim)
        if len(cells) <= max(ts_col, val_col):
            diagnostics.append(ParseDiagnostic(lineno, "ShortRow", line))
            continue
        try:
            ts = _parse_timestamp(cells[ts_col])
        except ValueError:
            diagnostics.append(ParseDiagnostic(lineno, "UnparseableTimestamp", line))
            saw_timestamp_failure = True
            continue
        try:
            value = float(cells[val_col])
        except ValueError:
            diagnostics.append(ParseDiagnostic(lineno, "NonNumericValue", line))
            continue
        if not np.isfinite(value):
            diagnostics.append(ParseDiagnostic(lineno, "NonNumericValue", line))
            continue
        points.append((ts, value))

    if not points:
        if saw_timestamp_failure and diagnostics and all(
            d.reason == "UnparseableTimestamp" for d in diagnostics
        ):
            raise UnparseableTimestamp("every row failed timestamp parsing")
        if diagnostics and all(d.reason == "NonNumericValue" for d in diagnostics):
            raise NonNumericValue("every row failed value parsing")
        raise EmptyInput("zero valid rows after parsing")

    # Stable sort keeps file order within a duplicate minute, so taking
    # the last entry of each run implements the keep-last rule.
    points.sort(key=lambda p: p[0])
    deduped: list[tuple[datetime, float]] = []
    for ts, value in points:
        if deduped and deduped[-1][0] == ts:
            deduped[-1] = (ts, value)
        else:
            deduped.append((ts, value))

    return RawSeries(
        timestamps=[p[0] for p in deduped],
        values=np.array([p[1] for p in deduped], dtype=np.float64),
        signal_kind=signal_kind,
        unit=unit,
        diagnostics=diagnostics,
    )


def resample_fill(
    raw: RawSeries,
    t_start: datetime | None = None,
    t_end: datetime | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Place a RawSeries on a gap-free minute axis with forward/backward fill.

    The axis runs from ``t_start`` to ``t_end`` inclusive (defaulting to
    the series' own first and last stamps). An observed minute keeps its
    value; any later gap carries the previous observation forward; the
    minutes before the first observation take that first observation.
    Returns ``(values, fill_mask)``.
    """
    if len(raw) == 0:
        raise EmptyInput("cannot resample an empty series")
    t_start = t_start if t_start is not None else raw.timestamps[0]
    t_end = t_end if t_end is not None else raw.timestamps[-1]
    n = int((t_end - t_start) / MINUTE) + 1
    if n < 1:
        raise EmptyInput("axis end precedes axis start")

    mask = np.full(n, FORWARD_FILLED, dtype=np.uint8)
    values = np.zeros(n, dtype=np.float64)
    obs_positions = np.array(
        [int((ts - t_start) / MINUTE) for ts in raw.timestamps], dtype=np.int64
    )
    inside = (obs_positions >= 0) & (obs_positions < n)
    obs_positions = obs_positions[inside]
    obs_values = raw.values[inside]
    if obs_positions.size == 0:
        raise EmptyInput("no observations fall inside the requested axis")

    values[obs_positions] = obs_values
    mask[obs_positions] = OBSERVED

    # index of the most recent observation at or before each minute
    last_obs = np.where(mask == OBSERVED, np.arange(n), -1)
    np.maximum.accumulate(last_obs, out=last_obs)
    leading = last_obs < 0
    first_pos = obs_positions[0]
    source = np.where(leading, first_pos, last_obs)
    out = values[source]
    mask[leading] = BACKWARD_FILLED
    return out, mask


def merge_op_pv(op: RawSeries, pv: RawSeries) -> UniformSeries:
    """Resample OP and PV onto the union of their time ranges.

    The shared axis spans from the earliest stamp of either signal to the
    latest; each signal is filled independently per the resampling rules,
    so offset or even disjoint ranges still yield a full grid.
    """
    if len(op) == 0 or len(pv) == 0:
        raise EmptyInput("both OP and PV series must be nonempty")
    t_start = min(op.timestamps[0], pv.timestamps[0])
    t_end = max(op.timestamps[-1], pv.timestamps[-1])
    op_values, op_mask = resample_fill(op, t_start, t_end)
    pv_values, pv_mask = resample_fill(pv, t_start, t_end)
    return UniformSeries(
        t0=t_start, op=op_values, pv=pv_values, op_fill=op_mask, pv_fill=pv_mask
    )


def write_table(series: UniformSeries, path_or_file) -> None:
    """Write the canonical unified table ``timestamp,op,pv,op_fill,pv_fill``."""
    own = isinstance(path_or_file, (str, os.PathLike))
    fh = open(path_or_file, "w", newline="") if own else path_or_file
    try:
        writer = csv.writer(fh)
        writer.writerow(["timestamp", "op", "pv", "op_fill", "pv_fill"])
        ts = series.t0
        for i in range(len(series)):
            writer.writerow(
                [
                    ts.isoformat(timespec="minutes"),
                    repr(float(series.op[i])),
                    repr(float(series.pv[i])),
                    FILL_TOKENS[int(series.op_fill[i])],
                    FILL_TOKENS[int(series.pv_fill[i])],
                ]
            )
            ts += series.step
    finally:
        if own:
            fh.close()


def read_table(path_or_file) -> UniformSeries:
    """Read a canonical unified table back into a UniformSeries."""
    own = isinstance(path_or_file, (str, os.PathLike))
    try:
        fh = open(path_or_file, "r", newline="") if own else path_or_file
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    try:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise EmptyInput("empty table")
        expected = ["timestamp", "op", "pv", "op_fill", "pv_fill"]
        if [h.strip() for h in header] != expected:
            raise EmptyInput(f"unexpected header {header}, want {expected}")
        stamps: list[datetime] = []
        op: list[float] = []
        pv: list[float] = []
        op_fill: list[int] = []
        pv_fill: list[int] = []
        for row in reader:
            if not row:
                continue
            stamps.append(_parse_timestamp(row[0]))
            op.append(float(row[1]))
            pv.append(float(row[2]))
            op_fill.append(FILL_CODES[row[3].strip()])
            pv_fill.append(FILL_CODES[row[4].strip()])
    finally:
        if own:
            fh.close()
    if not stamps:
        raise EmptyInput("table has no data rows")
    series = UniformSeries(
        t0=stamps[0],
        op=np.asarray(op, dtype=np.float64),
        pv=np.asarray(pv, dtype=np.float64),
        op_fill=np.asarray(op_fill, dtype=np.uint8),
        pv_fill=np.asarray(pv_fill, dtype=np.uint8),
    )
    # sanity: the stored stamps must form the implied uniform axis
    for i in (0, len(stamps) - 1):
        if stamps[i] != series.minute(i):
            raise EmptyInput("table timestamps are not a uniform minute axis")
    return series


def from_arrays(
    t0: datetime,
    op: Sequence[float] | np.ndarray,
    pv: Sequence[float] | np.ndarray,
) -> UniformSeries:
    """Build a fully observed UniformSeries from in-memory arrays."""
    op = np.asarray(op, dtype=np.float64)
    pv = np.asarray(pv, dtype=np.float64)
    mask = np.zeros(len(op), dtype=np.uint8)
    return UniformSeries(t0=t0, op=op, pv=pv, op_fill=mask, pv_fill=mask.copy())
