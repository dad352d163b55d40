"""Integer-millisecond simulation time utilities.

Every timestamp in the kernel is an integer tick count with 1 tick = 1 ms.
The step grids used by the study (20 ms, 15 ms, 1 ms) are all exact in this
base, so repeated stepping never accumulates floating-point drift.
"""

from __future__ import annotations

import re

# Type aliases, used throughout the package for documentation purposes.
SimTime = int   # tick count, >= 0
StepSize = int  # tick count, > 0

MS_PER_SECOND = 1000


class TimeError(ValueError):
    """Raised for malformed times or step sizes."""


def check_time(t: SimTime) -> SimTime:
    if not isinstance(t, int) or isinstance(t, bool) or t < 0:
        raise TimeError(f"simulation time must be a non-negative integer tick count, got {t!r}")
    return t


def check_step(h: StepSize) -> StepSize:
    if not isinstance(h, int) or isinstance(h, bool) or h <= 0:
        raise TimeError(f"step size must be a positive integer tick count, got {h!r}")
    return h


def snap_up(t: SimTime, h: StepSize) -> SimTime:
    """Smallest multiple of ``h`` that is >= ``t``."""
    check_time(t)
    check_step(h)
    return -(-t // h) * h


def grid_times(h: StepSize, end: SimTime) -> list[SimTime]:
    """All multiples of ``h`` in [0, end], starting at 0."""
    check_step(h)
    check_time(end)
    return list(range(0, end + 1, h))


_DURATION_RE = re.compile(r"^\s*([0-9]+(?:\.[0-9]+)?)\s*(ms|s)?\s*$")


def parse_duration(text: str | int | float) -> SimTime:
    """Parse a duration into ticks.

    Accepts integers (ticks), "250ms", "10s", or a bare number which is read
    as seconds ("2.419" -> 2419 ticks).  Fractions finer than 1 ms are
    rejected rather than rounded.
    """
    if isinstance(text, int) and not isinstance(text, bool):
        return check_time(text)
    if isinstance(text, float):
        return _seconds_to_ticks(text)
    m = _DURATION_RE.match(str(text))
    if not m:
        raise TimeError(f"cannot parse duration {text!r}")
    value, unit = m.groups()
    if unit == "ms":
        if "." in value:
            raise TimeError(f"sub-millisecond duration {text!r} is not representable")
        return check_time(int(value))
    return _seconds_to_ticks(float(value))


def _seconds_to_ticks(seconds: float) -> SimTime:
    ticks = round(seconds * MS_PER_SECOND)
    if abs(ticks - seconds * MS_PER_SECOND) > 1e-6:
        raise TimeError(f"duration {seconds!r}s is not a whole number of milliseconds")
    return check_time(ticks)


def format_ms(t: SimTime) -> str:
    return f"{t}ms"
