"""Timestamped signal traces shared by every backend.

A trace holds one row per step of each source (simulator, federate, or the
monolithic reference) plus a merged chronological view.  Rows carry the five
study signals; sources leave columns they do not produce empty.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

from .timebase import SimTime

COLUMNS = ("omega", "beta", "beta_set", "p_wind", "p_shaft_ratio")


class TraceError(ValueError):
    """Raised for malformed rows or mismatched trace schemas."""


@dataclass(frozen=True)
class TraceRow:
    time: SimTime
    source: str
    omega: float | None = None
    beta: float | None = None
    beta_set: bool | None = None
    p_wind: float | None = None
    p_shaft_ratio: float | None = None


class Trace:
    def __init__(self) -> None:
        self._rows: list[TraceRow] = []
        self._last_time: dict[str, SimTime] = {}

    def add_row(self, source: str, time: SimTime, **values) -> None:
        unknown = set(values) - set(COLUMNS)
        if unknown:
            raise TraceError(f"unknown trace columns: {sorted(unknown)}")
        last = self._last_time.get(source)
        if last is not None and time <= last:
            raise TraceError(f"non-increasing time {time} for source {source!r} (last {last})")
        for name, v in values.items():
            if name != "beta_set" and v is not None and not _finite(v):
                raise TraceError(f"non-finite value {v!r} for {name} at t={time}")
        self._last_time[source] = time
        self._rows.append(TraceRow(time=time, source=source, **values))

    @property
    def rows(self) -> list[TraceRow]:
        """Merged view: chronological, stable within equal timestamps."""
        return sorted(self._rows, key=lambda r: r.time)

    def rows_for(self, source: str) -> list[TraceRow]:
        return [r for r in self._rows if r.source == source]

    @property
    def sources(self) -> list[str]:
        seen: dict[str, None] = {}
        for r in self._rows:
            seen.setdefault(r.source, None)
        return list(seen)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("time", "source") + COLUMNS)
        for r in self.rows:
            w.writerow([r.time, r.source] + [_fmt(getattr(r, c)) for c in COLUMNS])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "Trace":
        trace = cls()
        reader = csv.reader(io.StringIO(text))
        header = next(reader, None)
        if header != ["time", "source", *COLUMNS]:
            raise TraceError(f"unexpected trace header {header!r}")
        for row in reader:
            time, source, *vals = row
            values = {c: _parse(c, v) for c, v in zip(COLUMNS, vals)}
            trace.add_row(source, int(time), **values)
        return trace

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Trace):
            return NotImplemented
        return self.rows == other.rows

    def __len__(self) -> int:
        return len(self._rows)


def _finite(v) -> bool:
    try:
        f = float(v)
    except (TypeError, ValueError):
        return False
    return f == f and f not in (float("inf"), float("-inf"))


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "1" if v else "0"
    return repr(float(v))


def _parse(column: str, text: str):
    if text == "":
        return None
    if column == "beta_set":
        return text == "1"
    return float(text)
