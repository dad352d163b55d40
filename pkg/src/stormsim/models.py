"""Wind-turbine plant, discrete pitch controller, and monolithic reference.

The plant is an elementary storm-control model: a gust drives wind power up,
a second-order electromechanical conversion turns shaft power into rotor
speed, and once the speed exceeds 110 % of rated a latched pitch command
engages a constant-rate servo that derates shaft power linearly in the pitch
angle.

The continuous part is integrated with a fixed-step classic Runge-Kutta
scheme so that coupling effects, not integrator error, dominate at the
15-20 ms step sizes used in the coupling study.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

from .timebase import MS_PER_SECOND, SimTime, StepSize, check_step, check_time
from .trace import Trace

# Fraction of rated speed at which the pitch protection engages.
THRESHOLD_FACTOR = 1.10

# Duration of the gust rise, seconds.  The gust profile is a smoothstep from
# base power to base + gust_ramp * GUST_RISE_S over this window, so gust_ramp
# is the mean slope of the rise in p.u./s.
GUST_RISE_S = 3.0


class ModelError(ValueError):
    """Raised for invalid model parameters or infeasible calibration."""


@dataclass(frozen=True)
class PlantParams:
    rated_speed: float = 1.0          # p.u.
    threshold_factor: float = THRESHOLD_FACTOR
    gust_start: SimTime = 668         # ms, pinned by calibrate()
    gust_ramp: float = 0.12           # p.u./s mean rise slope
    base_power: float = 1.0           # p.u.
    inertia_freq: float = 2.0         # rad/s, natural frequency of conversion
    damping_ratio: float = 0.7
    beta_max: float = 10.0            # degrees
    derate_slope: float = 0.06        # 1/degree
    servo_rate: float = 5.0           # degrees/s, constant pitch ramp

    def __post_init__(self) -> None:
        if self.threshold_factor != THRESHOLD_FACTOR:
            raise ModelError(f"threshold factor is fixed at {THRESHOLD_FACTOR}")
        if self.beta_max <= 0 or self.damping_ratio <= 0 or self.inertia_freq <= 0:
            raise ModelError("beta_max, damping_ratio and inertia_freq must be positive")
        if self.derate_slope * self.beta_max > 1.0 + 1e-12:
            raise ModelError("derate_slope * beta_max must not exceed 1 (shaft power would go negative)")
        if self.servo_rate <= 0:
            raise ModelError("servo_rate must be positive")
        check_time(self.gust_start)

    @property
    def threshold(self) -> float:
        return self.rated_speed * self.threshold_factor


@dataclass(frozen=True)
class PlantState:
    t: SimTime
    omega: float            # rotor speed, p.u.
    omega_dot: float        # p.u./s
    beta: float             # pitch angle, degrees
    p_wind: float           # p.u.
    p_shaft: float          # p.u., <= p_wind
    beta_set_in: bool       # latched servo-enable input


@dataclass(frozen=True)
class ControllerState:
    t: SimTime
    omega_in: float
    beta_set: bool


def initial_plant_state(params: PlantParams) -> PlantState:
    p0 = wind_power(params, 0)
    return PlantState(
        t=0,
        omega=params.base_power,
        omega_dot=0.0,
        beta=0.0,
        p_wind=p0,
        p_shaft=p0,
        beta_set_in=False,
    )


def initial_controller_state(params: PlantParams) -> ControllerState:
    return ControllerState(t=0, omega_in=params.base_power, beta_set=False)


def wind_power(params: PlantParams, t: SimTime) -> float:
    """Wind power input at time ``t``: flat, then a smoothstep gust."""
    check_time(t)
    rise_ms = GUST_RISE_S * MS_PER_SECOND
    u = (t - params.gust_start) / rise_ms
    if u <= 0.0:
        return params.base_power
    if u >= 1.0:
        u = 1.0
    s = u * u * (3.0 - 2.0 * u)
    return params.base_power + params.gust_ramp * GUST_RISE_S * s


def _derate(params: PlantParams, beta: float) -> float:
    return max(0.0, 1.0 - params.derate_slope * beta)


def _beta_at(params: PlantParams, beta0: float, enabled: bool, dt_s: float) -> float:
    if not enabled:
        return beta0
    return min(params.beta_max, beta0 + params.servo_rate * dt_s)


def plant_step(state: PlantState, params: PlantParams, h: StepSize) -> PlantState:
    """Advance the plant one step, consuming the latched servo-enable input.

    The second-order conversion is integrated with RK4; within the step the
    pitch angle follows its (deterministic) servo ramp, so all four stages
    see a consistent time-varying shaft power.
    """
    check_step(h)
    t0 = state.t
    h_s = h / MS_PER_SECOND
    wn = params.inertia_freq
    zeta = params.damping_ratio
    enabled = state.beta_set_in

    def p_shaft_at(tau_s: float) -> float:
        t_ms = t0 + tau_s * MS_PER_SECOND
        pw = _wind_power_f(params, t_ms)
        beta = _beta_at(params, state.beta, enabled, tau_s)
        return pw * _derate(params, beta)

    def rhs(tau_s: float, y: tuple[float, float]) -> tuple[float, float]:
        omega, omega_dot = y
        acc = wn * wn * (p_shaft_at(tau_s) - omega) - 2.0 * zeta * wn * omega_dot
        return (omega_dot, acc)

    y = (state.omega, state.omega_dot)
    k1 = rhs(0.0, y)
    k2 = rhs(h_s / 2.0, (y[0] + h_s / 2.0 * k1[0], y[1] + h_s / 2.0 * k1[1]))
    k3 = rhs(h_s / 2.0, (y[0] + h_s / 2.0 * k2[0], y[1] + h_s / 2.0 * k2[1]))
    k4 = rhs(h_s, (y[0] + h_s * k3[0], y[1] + h_s * k3[1]))
    omega = y[0] + h_s / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0])
    omega_dot = y[1] + h_s / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1])

    t1 = t0 + h
    beta1 = _beta_at(params, state.beta, enabled, h_s)
    pw1 = wind_power(params, t1)
    return PlantState(
        t=t1,
        omega=omega,
        omega_dot=omega_dot,
        beta=beta1,
        p_wind=pw1,
        p_shaft=pw1 * _derate(params, beta1),
        beta_set_in=enabled,
    )


def _wind_power_f(params: PlantParams, t_ms: float) -> float:
    # Continuous-time twin of wind_power for use inside RK4 stages.
    rise_ms = GUST_RISE_S * MS_PER_SECOND
    u = (t_ms - params.gust_start) / rise_ms
    if u <= 0.0:
        return params.base_power
    if u >= 1.0:
        u = 1.0
    s = u * u * (3.0 - 2.0 * u)
    return params.base_power + params.gust_ramp * GUST_RISE_S * s


def controller_step(state: ControllerState, omega_in: float, h: StepSize,
                    threshold: float = THRESHOLD_FACTOR) -> ControllerState:
    """Advance the controller one step; the enable output latches once set."""
    check_step(h)
    beta_set = state.beta_set or omega_in >= threshold
    return ControllerState(t=state.t + h, omega_in=omega_in, beta_set=beta_set)


def run_monolithic(params: PlantParams, horizon: SimTime, h: StepSize = 1) -> Trace:
    """Jointly integrate plant and controller at a fine fixed step.

    Within each step the coupling is zero-delay: the controller sees the
    rotor speed just computed for the new time, and the plant's servo input
    takes on the controller's decision at that same time.  The trace carries
    one row per step under source "Sim" with all signal columns filled.
    """
    check_time(horizon)
    if horizon <= 0:
        raise ModelError("horizon must be positive")
    check_step(h)
    trace = Trace()
    plant = initial_plant_state(params)
    ctrl = initial_controller_state(params)
    _mono_row(trace, plant, ctrl)
    for t in range(0, horizon, h):
        plant = plant_step(plant, params, h)
        ctrl = controller_step(ctrl, plant.omega, h, params.threshold)
        plant = replace(plant, beta_set_in=ctrl.beta_set)
        _mono_row(trace, plant, ctrl)
    return trace


def _mono_row(trace: Trace, plant: PlantState, ctrl: ControllerState) -> None:
    ratio = plant.p_shaft / plant.p_wind if plant.p_wind > 0 else 0.0
    trace.add_row("Sim", plant.t, omega=plant.omega, beta=plant.beta,
                  beta_set=ctrl.beta_set, p_wind=plant.p_wind, p_shaft_ratio=ratio)


def monolithic_crossing(params: PlantParams, cap: SimTime, h: StepSize = 1) -> SimTime | None:
    """First fine-grid time at which rotor speed reaches the threshold.

    Stops integrating at the crossing; used by the calibration search.
    """
    plant = initial_plant_state(params)
    thr = params.threshold
    for t in range(0, cap, h):
        plant = plant_step(plant, params, h)
        if plant.omega >= thr:
            return plant.t
    return None


def calibrate(params: PlantParams, target: SimTime) -> PlantParams:
    """Pin ``gust_start`` so the monolithic threshold crossing hits ``target``.

    All other parameters are held fixed.  The crossing time shifts one-for-one
    with the gust onset (the pre-event dynamics are time-invariant), so an
    integer bisection over gust_start is exact.
    """
    check_time(target)
    if target <= 0:
        raise ModelError("calibration target must be positive")

    cap = target + 4000
    current = monolithic_crossing(params, cap)
    if current == target:
        return params

    def crossing_at(gust_start: SimTime) -> SimTime | None:
        return monolithic_crossing(replace(params, gust_start=gust_start), cap)

    lo = 1
    hi = max(target, params.gust_start) + 1
    c_lo = crossing_at(lo)
    c_hi = crossing_at(hi)
    if c_lo is None or c_lo > target:
        raise ModelError(
            f"calibration bracket cannot enclose target {target}ms: "
            f"earliest reachable crossing is {c_lo}ms")
    if c_hi is not None and c_hi < target:
        raise ModelError(
            f"calibration bracket cannot enclose target {target}ms: "
            f"crossing still at {c_hi}ms with gust_start {hi}ms")

    # Invariant: crossing(lo) <= target, crossing(hi) > target or absent.
    while hi - lo > 1:
        mid = (lo + hi) // 2
        c = crossing_at(mid)
        if c is not None and c <= target:
            lo = mid
        else:
            hi = mid
    if crossing_at(lo) != target:
        raise ModelError(f"no gust_start reproduces crossing {target}ms exactly")
    return replace(params, gust_start=lo)
