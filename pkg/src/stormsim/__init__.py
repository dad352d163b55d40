"""Dual-backend co-simulation kernel with a turbine storm-control study.

Two orchestration backends drive the same simulator components: a central
scheduler with serial/parallel explicit coupling, and a message bus with
publish/subscribe and conservative time management.  The bundled study
couples an elementary wind-turbine plant with a discrete pitch controller
and reproduces how event timing depends on the coupling scheme, step sizes,
and lookahead.
"""

from .timebase import SimTime, StepSize, grid_times, parse_duration, snap_up
from .trace import Trace, TraceRow

__version__ = "0.1.0"

__all__ = [
    "SimTime",
    "StepSize",
    "snap_up",
    "grid_times",
    "parse_duration",
    "Trace",
    "TraceRow",
    "__version__",
]
