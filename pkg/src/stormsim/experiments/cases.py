"""Test-case matrix, event extraction, trace comparison, parameter files.

Six coupled test cases are examined: three step-size configurations (both
20 ms; both 15 ms; plant 20 ms with controller 15 ms) under parallel
(TC1-TC3) and serial (TC4-TC6) coupling, with the plant always stepped
before the controller in the serial setups.  A monolithic run at 1 ms
serves as the timing reference.

Three events characterize each run: the rotor speed crossing 110 % of
rated, the controller picking that information up (its command latching),
and the command reaching the plant's servo input.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from .. import models, rti, scheduler
from ..models import PlantParams
from ..simapi import ControllerSimulator, PlantSimulator
from ..timebase import SimTime
from ..trace import COLUMNS, Trace, TraceError
from . import federates

DEFAULT_HORIZON: SimTime = 10_000
CROSSING_TARGET: SimTime = 2_419

MODEL_REGISTRY = {"PlantSimulator": PlantSimulator, "ControllerSimulator": ControllerSimulator}


class CaseError(Exception):
    pass


@dataclass(frozen=True)
class TestCase:
    id: str
    mode: str                 # "serial" | "parallel"
    plant_dt: SimTime
    controller_dt: SimTime
    backend: str = "scheduler"    # "scheduler" | "rti"
    lookahead_steps: int = 1      # rti only
    compensate: bool = False      # rti only

    def __post_init__(self) -> None:
        if self.mode not in ("serial", "parallel"):
            raise CaseError(f"unknown mode {self.mode!r}")
        if self.backend not in ("scheduler", "rti"):
            raise CaseError(f"unknown backend {self.backend!r}")

    @property
    def label(self) -> str:
        return f"{self.id}/{self.backend}"


TEST_CASES: dict[str, TestCase] = {
    "TC1": TestCase("TC1", "parallel", 20, 20),
    "TC2": TestCase("TC2", "parallel", 15, 15),
    "TC3": TestCase("TC3", "parallel", 20, 15),
    "TC4": TestCase("TC4", "serial", 20, 20),
    "TC5": TestCase("TC5", "serial", 15, 15),
    "TC6": TestCase("TC6", "serial", 20, 15),
}


@dataclass(frozen=True)
class EventTiming:
    crossing: SimTime | None
    trigger: SimTime | None
    response: SimTime | None

    def __post_init__(self) -> None:
        stamps = [t for t in (self.crossing, self.trigger, self.response) if t is not None]
        if stamps != sorted(stamps):
            raise CaseError(f"event order violated: {self}")

    def all_present(self) -> bool:
        return None not in (self.crossing, self.trigger, self.response)

    def total_error(self, reference: SimTime) -> int | None:
        if not self.all_present():
            return None
        assert self.crossing is not None and self.trigger is not None and self.response is not None
        return (abs(self.crossing - reference) + abs(self.trigger - reference)
                + abs(self.response - reference))


def extract_events(trace: Trace, threshold: float = models.THRESHOLD_FACTOR) -> EventTiming:
    """Pull the three event timestamps out of a trace.

    Plant-side rows are those carrying wind power; command rows are those of
    sources that never carry wind power.  A single-source trace (the
    monolithic run) serves both roles.  Missing events are reported as None.
    """
    sources = trace.sources
    if not sources:
        raise TraceError("empty trace")
    plant_sources = {s for s in sources
                     if any(r.p_wind is not None for r in trace.rows_for(s))}
    if not plant_sources:
        raise TraceError("trace has no plant-side rows (no wind power column)")
    single = len(sources) == 1
    crossing = trigger = response = None
    for r in trace.rows:
        is_plant = r.source in plant_sources
        if crossing is None and is_plant and r.omega is not None and r.omega >= threshold:
            crossing = r.time
        if trigger is None and r.beta_set and (single or not is_plant):
            trigger = r.time
        if response is None and r.beta_set and is_plant:
            response = r.time
    return EventTiming(crossing=crossing, trigger=trigger, response=response)


# -- running ------------------------------------------------------------------

def build_scheduler_scenario(params: PlantParams, plant_dt: SimTime, controller_dt: SimTime,
                             horizon: SimTime) -> tuple[scheduler.Scenario, scheduler.CouplingMode, scheduler.CouplingMode]:
    sc = scheduler.Scenario(horizon=horizon)
    sc.add_simulator("plant", PlantSimulator("plant"), step_size=plant_dt)
    sc.add_simulator("controller", ControllerSimulator("controller"), step_size=controller_dt)
    plant = sc.create("plant", "Plant", federates._params_dict(params))
    ctrl = sc.create("controller", "Controller")
    sc.connect(plant, "omega", ctrl, "omega_in")
    sc.connect(ctrl, "beta_set", plant, "beta_set_in")
    serial = scheduler.Serial(order=("plant", "controller"))
    parallel = scheduler.Parallel()
    return sc, serial, parallel


def run_test_case(tc: TestCase, params: PlantParams | None = None,
                  horizon: SimTime = DEFAULT_HORIZON) -> tuple[Trace, EventTiming]:
    """Run one test case on its configured backend and extract the events."""
    params = params or default_params()
    try:
        if tc.backend == "scheduler":
            sc, serial, parallel = build_scheduler_scenario(
                params, tc.plant_dt, tc.controller_dt, horizon)
            mode = serial if tc.mode == "serial" else parallel
            trace = scheduler.run(sc, mode)
        else:
            federation, _ = federates.build_turbine_federation(
                params, tc.plant_dt, tc.controller_dt,
                parallel=(tc.mode == "parallel"),
                lookahead_steps=tc.lookahead_steps,
                compensate=tc.compensate)
            trace = rti.run_federation(federation, horizon)
    except Exception as e:
        raise CaseError(f"{tc.label}: {e}") from e
    return trace, extract_events(trace, params.threshold)


def run_monolithic_reference(params: PlantParams | None = None,
                             horizon: SimTime = DEFAULT_HORIZON) -> tuple[Trace, EventTiming]:
    params = params or default_params()
    trace = models.run_monolithic(params, horizon)
    return trace, extract_events(trace, params.threshold)


_default_params_cache: PlantParams | None = None


def default_params() -> PlantParams:
    """Stock parameters, verified (and if needed re-pinned) against the
    reference crossing time."""
    global _default_params_cache
    if _default_params_cache is None:
        _default_params_cache = models.calibrate(PlantParams(), CROSSING_TARGET)
    return _default_params_cache


# -- trace comparison ----------------------------------------------------------

@dataclass(frozen=True)
class TraceComparison:
    event_deltas: dict[str, int | None]
    max_abs_deviation: dict[str, float]
    first_divergence: SimTime | None

    @property
    def identical(self) -> bool:
        return (all(d == 0 for d in self.event_deltas.values())
                and all(v == 0.0 for v in self.max_abs_deviation.values())
                and self.first_divergence is None)


def compare_traces(a: Trace, b: Trace) -> TraceComparison:
    """Compare per-event timestamps and signals on the common time grid.

    For each column, the value at a time is taken from the first merged row
    carrying it; deviations are reported per column along with the earliest
    common time at which any column differs.
    """
    ev_a, ev_b = extract_events(a), extract_events(b)
    deltas: dict[str, int | None] = {}
    for name in ("crossing", "trigger", "response"):
        ta, tb = getattr(ev_a, name), getattr(ev_b, name)
        deltas[name] = None if ta is None or tb is None else ta - tb

    grid_a, grid_b = _by_time(a), _by_time(b)
    common = sorted(set(grid_a) & set(grid_b))
    max_dev = {c: 0.0 for c in COLUMNS}
    first_div: SimTime | None = None
    for t in common:
        va, vb = grid_a[t], grid_b[t]
        for c in COLUMNS:
            if c not in va or c not in vb:
                continue
            x, y = va[c], vb[c]
            if c == "beta_set":
                dev = 0.0 if bool(x) == bool(y) else 1.0
            else:
                dev = abs(float(x) - float(y))
            if dev > max_dev[c]:
                max_dev[c] = dev
            if dev > 0.0 and first_div is None:
                first_div = t
    return TraceComparison(event_deltas=deltas, max_abs_deviation=max_dev,
                           first_divergence=first_div)


def _by_time(trace: Trace) -> dict[SimTime, dict[str, object]]:
    out: dict[SimTime, dict[str, object]] = {}
    for r in trace.rows:
        slot = out.setdefault(r.time, {})
        for c in COLUMNS:
            v = getattr(r, c)
            if v is not None and c not in slot:
                slot[c] = v
    return out


# -- parameter files -----------------------------------------------------------

_INT_FIELDS = {"gust_start"}


def save_params(params: PlantParams, path: str | Path) -> None:
    lines = [f"{name}={getattr(params, name)}" for name in PlantSimulator.PARAM_NAMES]
    Path(path).write_text("\n".join(lines) + "\n")


def load_params(path: str | Path) -> PlantParams:
    values: dict[str, float | int] = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise CaseError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if key not in PlantSimulator.PARAM_NAMES:
            raise CaseError(f"{path}:{lineno}: unknown parameter {key!r}")
        values[key] = int(value) if key in _INT_FIELDS else float(value)
    return PlantParams(**values)
