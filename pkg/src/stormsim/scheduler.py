"""Centrally-scheduled coupling backend.

A scenario wires simulator entities together through attribute connections
and a single loop advances every simulator over a shared integer-tick clock.
Two explicit (non-iterative) coupling modes are provided:

* Serial: due simulators are processed one after the other in a fixed order;
  a value a producer publishes for time tau is visible to consumers sampling
  at tau within the same pass (send and delivery at the same time instant).
* Parallel: due simulators are processed against a snapshot; a value for
  time tau becomes visible strictly after tau, so every hop lags by one
  receiving step.

Producers publish timestamped output samples after every step; consumers
sample those signals at points dictated by their input kind: zero-order-hold
inputs sample at the step start, decision inputs sample at the step end.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .simapi import EntityId
from .timebase import SimTime, StepSize, check_step, check_time
from .trace import COLUMNS, Trace


class SchedulerError(Exception):
    """Base error for scenario construction and execution."""


class ConnectionError_(SchedulerError):
    pass


class EmptyRuleMatchError(SchedulerError):
    """A connection rule matched nothing; almost always a scenario bug."""


class CycleError(SchedulerError):
    pass


@dataclass(frozen=True)
class Connection:
    src: EntityId
    src_attr: str
    dst: EntityId
    dst_attr: str


@dataclass(frozen=True)
class Serial:
    order: tuple[str, ...]


@dataclass(frozen=True)
class Parallel:
    concurrent: bool = True


CouplingMode = Serial | Parallel


@dataclass
class _SimSlot:
    name: str
    sim: Any                      # Simulator protocol (in-process or remote)
    step_size: StepSize
    meta_attrs: set[str]
    model_of: dict[EntityId, str] = field(default_factory=dict)


class Scenario:
    """Declarative co-simulation setup: simulators, entities, connections."""

    def __init__(self, horizon: SimTime) -> None:
        check_time(horizon)
        if horizon <= 0:
            raise SchedulerError("horizon must be positive")
        self.horizon = horizon
        self._slots: dict[str, _SimSlot] = {}
        self.connections: list[Connection] = []

    # -- construction ----------------------------------------------------

    def add_simulator(self, name: str, sim: Any, step_size: StepSize,
                      config: dict | None = None) -> None:
        if name in self._slots:
            raise SchedulerError(f"duplicate simulator name {name!r}")
        check_step(step_size)
        meta = sim.init(step_size, config)
        self._slots[name] = _SimSlot(name=name, sim=sim, step_size=step_size,
                                     meta_attrs=meta.attrs())

    def create(self, name: str, model: str, params: dict | None = None) -> EntityId:
        slot = self._slot(name)
        entity = slot.sim.create(model, params)
        slot.model_of[entity] = model
        return entity

    def connect(self, src: EntityId, src_attr: str, dst: EntityId, dst_attr: str) -> None:
        if src == dst:
            raise ConnectionError_(f"self-loop on entity {src}")
        src_slot = self._slot(src.simulator_id)
        dst_slot = self._slot(dst.simulator_id)
        if src_attr not in src_slot.meta_attrs:
            raise ConnectionError_(f"unknown source attribute {src.simulator_id}.{src_attr}")
        if dst_attr not in dst_slot.meta_attrs:
            raise ConnectionError_(f"unknown destination attribute {dst.simulator_id}.{dst_attr}")
        edge = Connection(src, src_attr, dst, dst_attr)
        if edge in self.connections:
            raise ConnectionError_(f"duplicate connection {src}.{src_attr} -> {dst}.{dst_attr}")
        self.connections.append(edge)

    def connect_by_rule(self, src_model: str, dst_model: str, attr_map: dict[str, str]) -> int:
        """Connect entities of two model types pairwise (by entity index).

        Returns the number of edges added; an empty match set is an error.
        """
        srcs = self._entities_of(src_model)
        dsts = self._entities_of(dst_model)
        pairs = list(zip(srcs, dsts))
        if not pairs:
            raise EmptyRuleMatchError(f"rule {src_model!r} -> {dst_model!r} matched no entity pairs")
        added = 0
        for src, dst in pairs:
            for src_attr, dst_attr in attr_map.items():
                self.connect(src, src_attr, dst, dst_attr)
                added += 1
        return added

    # -- helpers ----------------------------------------------------------

    def _slot(self, name: str) -> _SimSlot:
        if name not in self._slots:
            raise SchedulerError(f"unknown simulator {name!r}")
        return self._slots[name]

    def _entities_of(self, model: str) -> list[EntityId]:
        out: list[EntityId] = []
        known = False
        for slot in self._slots.values():
            for entity, m in slot.model_of.items():
                if m == model:
                    out.append(entity)
            meta = getattr(slot.sim, "_meta_cache", None)
            if meta is not None and any(ms.model_name == model for ms in meta.models):
                known = True
        if not out and not known:
            raise ConnectionError_(f"unknown model type {model!r}")
        return out

    @property
    def simulator_names(self) -> list[str]:
        return list(self._slots)

    def sampling_of(self, name: str, attr: str) -> str:
        sampling = getattr(self._slot(name).sim, "input_sampling", {})
        return sampling.get(attr, "step_start")


def run(scenario: Scenario, mode: CouplingMode) -> Trace:
    """Execute the scenario to its horizon and return the merged trace."""
    return _Runner(scenario, mode).run()


class _Runner:
    def __init__(self, scenario: Scenario, mode: CouplingMode) -> None:
        self.sc = scenario
        self.mode = mode
        self.serial = isinstance(mode, Serial)
        if self.serial:
            order = list(mode.order)
            if sorted(order) != sorted(scenario.simulator_names):
                raise SchedulerError(
                    f"serial order {order} must list every simulator exactly once")
            self.order = order
            self._check_same_step_cycles()
        elif isinstance(mode, Parallel):
            self.order = scenario.simulator_names
        else:
            raise SchedulerError(f"unknown coupling mode {mode!r}")
        # Publication store: (entity, attr) -> list of (semantic_time, seq, value).
        self._samples: dict[tuple[EntityId, str], list[tuple[SimTime, int, Any]]] = {}
        self._seq = 0
        self._inputs_of: dict[str, list[Connection]] = {n: [] for n in self.order}
        self._published_attrs: dict[str, set[tuple[EntityId, str]]] = {n: set() for n in self.order}
        for c in scenario.connections:
            self._inputs_of[c.dst.simulator_id].append(c)
            self._published_attrs[c.src.simulator_id].add((c.src, c.src_attr))

    def _check_same_step_cycles(self) -> None:
        # Zero-delay (step-end sampled) edges must respect the serial order;
        # a cycle among them cannot be scheduled by any order.
        pos = {name: i for i, name in enumerate(self.order)}
        zero_delay = [c for c in self.sc.connections
                      if self.sc.sampling_of(c.dst.simulator_id, c.dst_attr) == "step_end"]
        graph: dict[str, set[str]] = {}
        for c in zero_delay:
            graph.setdefault(c.src.simulator_id, set()).add(c.dst.simulator_id)
        state: dict[str, int] = {}

        def visit(node: str) -> None:
            state[node] = 1
            for nxt in graph.get(node, ()):  # pragma: no branch
                if state.get(nxt) == 1:
                    raise CycleError(f"same-step dependency cycle through {node!r} -> {nxt!r}")
                if nxt not in state:
                    visit(nxt)
            state[node] = 2

        for node in list(graph):
            if node not in state:
                visit(node)
        for c in zero_delay:
            if pos[c.src.simulator_id] > pos[c.dst.simulator_id]:
                raise CycleError(
                    f"serial order steps {c.dst.simulator_id!r} before its zero-delay "
                    f"source {c.src.simulator_id!r}")

    # -- publication and sampling -----------------------------------------

    def _publish(self, name: str) -> None:
        slot = self.sc._slot(name)
        for entity, attr in sorted(self._published_attrs[name], key=lambda p: (p[0], p[1])):
            value = slot.sim.get_data(entity, [attr])[attr]
            key = (entity, attr)
            self._samples.setdefault(key, []).append((slot.sim.clock, self._seq, value))
            self._seq += 1

    def _resolve(self, name: str, tau_start: SimTime, tau_end: SimTime) -> dict[str, Any]:
        """Sample every connected input of ``name``.

        Zero-order-hold inputs sample at ``tau_start``, decision inputs at
        ``tau_end``; serial sampling is closed (a sample at tau is in effect
        at tau), parallel sampling is strict.
        """
        out: dict[str, Any] = {}
        for c in self._inputs_of[name]:
            tau = tau_start if self.sc.sampling_of(name, c.dst_attr) == "step_start" else tau_end
            best: tuple[SimTime, int, Any] | None = None
            for sample in self._samples.get((c.src, c.src_attr), ()):  # pragma: no branch
                sem, seq, value = sample
                if (sem <= tau) if self.serial else (sem < tau):
                    if best is None or (sem, seq) > best[:2]:
                        best = sample
            if best is not None:
                prev = out.get(c.dst_attr)
                if prev is None or best[:2] > prev[:2]:
                    out[c.dst_attr] = best
        return {attr: sample[2] for attr, sample in out.items()}

    # -- trace rows --------------------------------------------------------

    def _row(self, trace: Trace, name: str, t: SimTime) -> None:
        slot = self.sc._slot(name)
        entity = next(iter(slot.model_of))
        own = [col for col in COLUMNS if col in slot.meta_attrs]
        values = slot.sim.get_data(entity, own) if own else {}
        # Record zero-order-hold input views under their source column so the
        # row shows the signal the simulator is acting on at this time.
        views = self._resolve(name, t, t)
        for c in self._inputs_of[name]:
            if self.sc.sampling_of(name, c.dst_attr) != "step_start":
                continue
            if c.dst_attr in views and c.src_attr in COLUMNS and c.src_attr not in values:
                values[c.src_attr] = views[c.dst_attr]
        trace.add_row(name, t, **values)

    # -- main loop ----------------------------------------------------------

    def run(self) -> Trace:
        sc = self.sc
        trace = Trace()
        for name in self.order:
            if not sc._slot(name).model_of:
                raise SchedulerError(f"simulator {name!r} has no entities")

        rounds = sorted({t
                         for name in self.order
                         for t in range(0, sc.horizon - sc._slot(name).step_size + 1,
                                        sc._slot(name).step_size)})
        for t in rounds:
            due = [n for n in self.order
                   if t % sc._slot(n).step_size == 0
                   and t + sc._slot(n).step_size <= sc.horizon]
            if self.serial:
                for name in due:
                    self._advance(trace, name, t)
            else:
                resolved = {}
                for name in due:
                    h = sc._slot(name).step_size
                    resolved[name] = self._resolve(name, t, t + h)
                    self._row(trace, name, t)
                self._step_parallel(due, t, resolved)
                for name in due:
                    self._publish(name)
        for name in self.order:
            slot = sc._slot(name)
            self._row(trace, name, slot.sim.clock)
        return trace

    def _advance(self, trace: Trace, name: str, t: SimTime) -> None:
        slot = self.sc._slot(name)
        inputs = self._resolve(name, t, t + slot.step_size)
        self._row(trace, name, t)
        try:
            slot.sim.step(t, inputs)
        except Exception as e:
            raise SchedulerError(f"simulator {name!r} failed at t={t}: {e}") from e
        self._publish(name)

    def _step_parallel(self, due: list[str], t: SimTime, resolved: dict[str, dict]) -> None:
        assert isinstance(self.mode, Parallel)

        def one(name: str) -> None:
            try:
                self.sc._slot(name).sim.step(t, resolved[name])
            except SchedulerError:
                raise
            except Exception as e:
                raise SchedulerError(f"simulator {name!r} failed at t={t}: {e}") from e

        if self.mode.concurrent and len(due) > 1:
            # Inputs were snapshotted above and simulators are disjoint, so
            # the result is independent of interleaving.
            with ThreadPoolExecutor(max_workers=len(due)) as pool:
                list(pool.map(one, due))
        else:
            for name in due:
                one(name)


# -- declarative scenario files ---------------------------------------------

def scenario_from_file(path: str | Path, registry: dict[str, Any],
                       horizon: SimTime | None = None) -> tuple[Scenario, CouplingMode]:
    """Build a scenario from a JSON description.

    The document lists simulators (factory name, step size, model, params),
    connections, the coupling mode, and the horizon.  ``registry`` maps
    factory names to simulator classes.
    """
    doc = json.loads(Path(path).read_text())
    sc = Scenario(horizon=horizon or int(doc["horizon_ms"]))
    entities: dict[str, EntityId] = {}
    for spec in doc["simulators"]:
        name = spec["name"]
        factory = registry[spec["factory"]]
        sc.add_simulator(name, factory(name), step_size=int(spec["step_ms"]),
                         config=spec.get("config"))
        entities[name] = sc.create(name, spec["model"], spec.get("params"))
    for conn in doc["connections"]:
        src_name, src_attr = conn["from"].split(".", 1)
        dst_name, dst_attr = conn["to"].split(".", 1)
        sc.connect(entities[src_name], src_attr, entities[dst_name], dst_attr)
    mode_doc = doc.get("mode", "parallel")
    if isinstance(mode_doc, dict):
        mode: CouplingMode = Serial(order=tuple(mode_doc["serial"]))
    elif mode_doc == "parallel":
        mode = Parallel()
    else:
        raise SchedulerError(f"unknown mode {mode_doc!r}")
    return sc, mode
