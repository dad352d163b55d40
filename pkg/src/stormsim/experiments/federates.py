"""Turbine federates for the message-bus backend.

Both federates wrap the same simulator objects the central scheduler drives,
so a federation configured to match the scheduler's coupling semantics
reproduces its trace bit for bit.  Three lookahead profiles are supported:

* zero: lookahead 0; freshly computed values are sent at the current bus
  time and arrive instantly (zero-lookahead services).
* uncompensated: lookahead of one own step; values are sent when computed,
  so the controller's command reaches the plant one plant step late.
* compensated: lookahead of one own step, with the bus time lagging the
  simulator time by one step; deliveries then land at their semantically
  correct times and the zero-lookahead behavior is recovered.

Sampling mirrors the scheduler's coupling modes: serial sampling is closed
(a value for time tau is usable at tau), parallel sampling is strict.
"""

from __future__ import annotations

from typing import Any

from ..models import PlantParams
from ..rti import (Federation, FederateAdapter, Fom, Grant, ObjectAttribute,
                   ObjectClass, ReceptionMode, Som, TimestampedMessage,
                   create_federation)
from ..simapi import ControllerSimulator, PlantSimulator
from ..timebase import SimTime
from ..trace import Trace

PROFILE_ZERO = "zero"
PROFILE_UNCOMPENSATED = "uncompensated"
PROFILE_COMPENSATED = "compensated"


def turbine_fom() -> Fom:
    return Fom(objects=(
        ObjectClass(class_name="Turbine", attributes=(
            ObjectAttribute(name="omega", data_type="float64", units="p.u.", resolution="1e-12"),
            ObjectAttribute(name="beta_set", data_type="bool", units="flag"),
        )),
    ))


def plant_som() -> Som:
    return Som(federate_name="plant", objects=turbine_fom().objects,
               published=frozenset({"omega"}), subscribed=frozenset({"beta_set"}))


def controller_som() -> Som:
    return Som(federate_name="controller", objects=turbine_fom().objects,
               published=frozenset({"beta_set"}), subscribed=frozenset({"omega"}))


class _TurbineFederate(FederateAdapter):
    """Common slot bookkeeping: received samples, sampling, trace access."""

    def __init__(self, handle, dt: SimTime, profile: str, parallel: bool,
                 peer_offset: SimTime) -> None:
        super().__init__(handle)
        self.dt = dt
        self.profile = profile
        self.parallel = parallel
        # In the zero-lookahead profile peers publish freshly computed values
        # at their current bus time, so a sample's semantic time trails its
        # delivery time by one peer step.
        self.peer_offset = peer_offset
        self.samples: list[tuple[SimTime, int, Any]] = []
        self.trace: Trace | None = None
        self.horizon: SimTime = 0

    def on_deliver(self, msgs: list[TimestampedMessage]) -> None:
        for m in msgs:
            self.samples.append((m.delivery_time + self.peer_offset, m.seq, m.value))

    def sample_at(self, tau: SimTime) -> Any | None:
        best: tuple[SimTime, int, Any] | None = None
        for sem, seq, value in self.samples:
            ok = sem < tau if self.parallel else sem <= tau
            if ok and (best is None or (sem, seq) > best[:2]):
                best = (sem, seq, value)
        return None if best is None else best[2]

    def begin(self, federation: Federation, trace: Trace, horizon: SimTime) -> None:
        self.trace = trace
        self.horizon = horizon
        self.slot(federation, 0)

    def on_grant(self, federation: Federation, grant: Grant) -> None:
        self.slot(federation, grant.time)

    def slot(self, federation: Federation, g: SimTime) -> None:
        raise NotImplementedError


class PlantFederate(_TurbineFederate):
    """Plant: integrates one step per grant, publishes the new rotor speed.

    The servo-enable input is a zero-order-hold boundary condition sampled
    at the step start.  All profiles publish the post-step speed at the
    current bus time; the profile solely determines the lookahead delay the
    bus adds on top.
    """

    def __init__(self, handle, sim: PlantSimulator, dt, profile, parallel, peer_offset) -> None:
        super().__init__(handle, dt, profile, parallel, peer_offset)
        self.sim = sim
        self.entity = sim.entities[0]

    def slot(self, federation: Federation, g: SimTime) -> None:
        assert self.trace is not None
        flag = self.sample_at(g)
        self._row(g, flag)
        if g + self.dt <= self.horizon:
            inputs = {} if flag is None else {"beta_set_in": bool(flag)}
            self.sim.step(g, inputs)
            omega = self.sim.get_data(self.entity, ["omega"])["omega"]
            federation.update_attribute(self.handle, "omega", omega, send_time=g)
            federation.time_advance_request(self.handle, g + self.dt)
        else:
            federation.resign(self.handle)
            self.finished = True

    def _row(self, g: SimTime, flag: Any | None) -> None:
        data = self.sim.get_data(self.entity, ["omega", "beta", "p_wind", "p_shaft_ratio"])
        values = dict(data)
        if flag is not None:
            values["beta_set"] = bool(flag)
        assert self.trace is not None
        self.trace.add_row(self.handle.name, g, **values)


class ControllerFederate(_TurbineFederate):
    """Discrete pitch controller federate.

    In the zero and compensated profiles a grant to g computes the decision
    for g + dt, reading the speed in effect at that instant; the row written
    at g shows the previous decision, matching the scheduler's convention.
    In the uncompensated profile the decision is made at the grant time from
    whatever has been delivered, and the bus delay does the rest.
    """

    def __init__(self, handle, sim: ControllerSimulator, dt, profile, parallel, peer_offset) -> None:
        super().__init__(handle, dt, profile, parallel, peer_offset)
        self.sim = sim
        self.entity = sim.entities[0]

    def slot(self, federation: Federation, g: SimTime) -> None:
        assert self.trace is not None
        if self.profile == PROFILE_UNCOMPENSATED:
            if g > 0:
                value = self.sample_at(g)
                inputs = {} if value is None else {"omega_in": float(value)}
                self.sim.step(g - self.dt, inputs)
            self._row(g)
            self._publish(federation, g)
            if g + self.dt <= self.horizon:
                federation.time_advance_request(self.handle, g + self.dt)
            else:
                federation.resign(self.handle)
                self.finished = True
            return

        self._row(g)
        if g + self.dt <= self.horizon:
            value = self.sample_at(g + self.dt)
            inputs = {} if value is None else {"omega_in": float(value)}
            self.sim.step(g, inputs)
            self._publish(federation, g)
            federation.time_advance_request(self.handle, g + self.dt)
        else:
            federation.resign(self.handle)
            self.finished = True

    def _publish(self, federation: Federation, g: SimTime) -> None:
        beta_set = self.sim.get_data(self.entity, ["beta_set"])["beta_set"]
        federation.update_attribute(self.handle, "beta_set", bool(beta_set), send_time=g)

    def _row(self, g: SimTime) -> None:
        beta_set = self.sim.get_data(self.entity, ["beta_set"])["beta_set"]
        assert self.trace is not None
        self.trace.add_row(self.handle.name, g, beta_set=bool(beta_set))


def build_turbine_federation(params: PlantParams, plant_dt: SimTime, controller_dt: SimTime,
                             parallel: bool, lookahead_steps: int, compensate: bool,
                             external_controller: bool = False,
                             ) -> tuple[Federation, dict[str, Any]]:
    """Assemble the two-federate storm-control federation.

    Lookahead is ``lookahead_steps`` of each federate's own step size.  With
    ``external_controller`` the controller slot is left open for a remote
    federate to join over the wire; the returned info dict carries what the
    remote side must know.
    """
    if compensate and lookahead_steps == 0:
        raise ValueError("compensation requires a positive lookahead")
    profile = (PROFILE_ZERO if lookahead_steps == 0
               else PROFILE_COMPENSATED if compensate
               else PROFILE_UNCOMPENSATED)
    federation = create_federation(turbine_fom())

    plant_sim = PlantSimulator("plant")
    plant_sim.init(plant_dt)
    plant_sim.create("Plant", _params_dict(params))
    plant_handle = federation.join(plant_som(), lookahead=lookahead_steps * plant_dt,
                                   reception_mode=ReceptionMode.TIME_STEPPED)
    # The plant integrates one step ahead of its bus time in every profile,
    # so its outgoing side is already compensated; only the controller, which
    # reads at its decision instant, needs the widened receive window.  A
    # widened plant window would batch two command samples into one grant and
    # time-stepped reception would drop the one its step-start read needs.
    plant = PlantFederate(plant_handle, plant_sim, plant_dt, profile, parallel,
                          peer_offset=controller_dt if profile == PROFILE_ZERO else 0)
    federation.register_adapter(plant)

    info: dict[str, Any] = {
        "profile": profile,
        "parallel": parallel,
        "controller_dt": controller_dt,
        "plant_dt": plant_dt,
        "lookahead_steps": lookahead_steps,
        "controller_lookahead": lookahead_steps * controller_dt,
        "peer_offset": plant_dt if profile == PROFILE_ZERO else 0,
        # Reconstructing controller trace rows from its updates: the row time
        # is send_time + row_offset (the published value is the decision for
        # one step ahead except in the uncompensated profile).
        "row_offset": 0 if profile == PROFILE_UNCOMPENSATED else controller_dt,
    }
    if external_controller:
        return federation, info

    ctrl_sim = ControllerSimulator("controller")
    ctrl_sim.init(controller_dt)
    ctrl_sim.create("Controller")
    ctrl_handle = federation.join(controller_som(), lookahead=lookahead_steps * controller_dt,
                                  reception_mode=ReceptionMode.TIME_STEPPED)
    if compensate:
        federation.enable_lookahead_compensation(ctrl_handle)
    ctrl = ControllerFederate(ctrl_handle, ctrl_sim, controller_dt, profile, parallel,
                              peer_offset=plant_dt if profile == PROFILE_ZERO else 0)
    federation.register_adapter(ctrl)
    return federation, info


def _params_dict(params: PlantParams) -> dict[str, Any]:
    return {name: getattr(params, name) for name in PlantSimulator.PARAM_NAMES}
