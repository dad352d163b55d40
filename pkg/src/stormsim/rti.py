"""Message-bus backend with conservative time management.

Federates join a federation against a federation-wide object model, declare
publications and subscriptions, exchange timestamped attribute updates, and
advance time only through request/grant negotiation.  A grant to time t is
issued when t is provably safe: no other federate can still send a message
with an earlier delivery time (lower bound time stamp, LBTS).

All state lives in the federates; the federation object stores only routing
metadata, in-flight messages, and bookkeeping logs.  Service operations are
atomic with respect to each other, so out-of-process federates may call in
from independent threads while in-process federates are driven sequentially
for reproducibility.

Lookahead compensation implements the "bus time lags one step behind the
simulator" pattern: a compensated federate presents outputs computed for
t + lookahead while its bus time is t, and its receive window is widened by
its lookahead.  Grants to a compensated federate are therefore gated on
LBTS covering the widened window, which keeps the scheme conservative.
"""

from __future__ import annotations

import json
import math
import threading
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any, Callable

from .timebase import SimTime, check_time
from .trace import Trace


class RtiError(Exception):
    pass


class FomError(RtiError):
    pass


class JoinError(RtiError):
    pass


class PublicationError(RtiError):
    pass


class TimeManagementError(RtiError):
    pass


class DeadlockError(RtiError):
    """No grant is issuable and every federate is blocked."""


# -- object models ------------------------------------------------------------

@dataclass(frozen=True)
class ObjectAttribute:
    name: str
    data_type: str
    units: str
    resolution: str | None = None


@dataclass(frozen=True)
class ObjectClass:
    class_name: str
    attributes: tuple[ObjectAttribute, ...]

    def attr_names(self) -> set[str]:
        return {a.name for a in self.attributes}


@dataclass(frozen=True)
class Fom:
    objects: tuple[ObjectClass, ...]

    def __post_init__(self) -> None:
        names = [o.class_name for o in self.objects]
        if len(set(names)) != len(names):
            raise FomError(f"duplicate class names in federation object model: {names}")

    def attr_names(self) -> set[str]:
        out: set[str] = set()
        for o in self.objects:
            out.update(o.attr_names())
        return out


@dataclass(frozen=True)
class Som:
    federate_name: str
    objects: tuple[ObjectClass, ...]
    published: frozenset[str]
    subscribed: frozenset[str]

    def __post_init__(self) -> None:
        own = set()
        for o in self.objects:
            own.update(o.attr_names())
        for attr in sorted(self.published | self.subscribed):
            if attr not in own:
                raise FomError(f"attribute {attr!r} declared but not described in the object model")


def fom_from_dict(doc: dict) -> Fom:
    return Fom(objects=_classes_from(doc))


def som_from_dict(doc: dict) -> Som:
    return Som(
        federate_name=doc["federate"],
        objects=_classes_from(doc),
        published=frozenset(doc.get("published", ())),
        subscribed=frozenset(doc.get("subscribed", ())),
    )


def _classes_from(doc: dict) -> tuple[ObjectClass, ...]:
    classes = []
    for obj in doc["objects"]:
        attrs = tuple(
            ObjectAttribute(name=a["name"], data_type=a["data_type"],
                            units=a["units"], resolution=a.get("resolution"))
            for a in obj["attributes"])
        classes.append(ObjectClass(class_name=obj["class"], attributes=attrs))
    return tuple(classes)


def fom_from_file(path: str | Path) -> Fom:
    return fom_from_dict(json.loads(Path(path).read_text()))


def som_from_file(path: str | Path) -> Som:
    return som_from_dict(json.loads(Path(path).read_text()))


# -- runtime records ----------------------------------------------------------

class ReceptionMode(Enum):
    TIME_STEPPED = "time-stepped"
    EVENT_RESPONSIVE = "event-responsive"


@dataclass(frozen=True)
class TimestampedMessage:
    sender: str
    attribute: str
    value: Any
    send_time: SimTime
    delivery_time: SimTime
    seq: int


@dataclass(frozen=True)
class Grant:
    time: SimTime
    messages: tuple[TimestampedMessage, ...]


class FederateHandle:
    """Mutable per-federate record owned by the federation."""

    def __init__(self, name: str, lookahead: int, reception_mode: ReceptionMode,
                 join_seq: int) -> None:
        self.name = name
        self.lookahead = lookahead
        self.reception_mode = reception_mode
        self.join_seq = join_seq
        self.granted_time: SimTime = 0
        self.pending_request: SimTime | None = None
        self.compensated = False
        self.resigned = False
        self.published: frozenset[str] = frozenset()
        self.subscribed: frozenset[str] = frozenset()

    def regulating_bound(self) -> SimTime:
        # A pending request counts at its requested time: the federate cannot
        # send until granted, and then only at or after that time.  Not so
        # for event-responsive federates, whose grant may be pulled back to
        # an earlier message time; they regulate from their granted time.
        if self.reception_mode is ReceptionMode.EVENT_RESPONSIVE:
            return self.granted_time + self.lookahead
        t = self.pending_request if self.pending_request is not None else self.granted_time
        return t + self.lookahead

    def receive_window(self, t: SimTime) -> SimTime:
        return t + (self.lookahead if self.compensated else 0)

    def __repr__(self) -> str:  # pragma: no cover - debug aid
        return (f"FederateHandle({self.name!r}, granted={self.granted_time}, "
                f"lookahead={self.lookahead}, pending={self.pending_request})")


@dataclass
class _GrantLogEntry:
    federate: str
    time: SimTime
    window: SimTime
    lbts: float
    others: tuple[tuple[str, SimTime, SimTime | None, int], ...]  # name, granted, pending, lookahead


@dataclass
class _DeliveryLogEntry:
    seq: int
    receiver: str
    delivery_time: SimTime
    receiver_granted: SimTime
    status: str  # consumed | superseded


class Federation:
    """Routing, declaration and time management for one federation."""

    def __init__(self, fom: Fom) -> None:
        if not isinstance(fom, Fom):
            raise FomError(f"malformed federation object model: {fom!r}")
        self.fom = fom
        self._federates: dict[str, FederateHandle] = {}
        self._inboxes: dict[str, list[TimestampedMessage]] = {}
        self._adapters: dict[str, Any] = {}
        self._deliver_cb: dict[str, Callable[[list[TimestampedMessage]], None]] = {}
        self._seq = 0
        self._lock = threading.RLock()
        self._cond = threading.Condition(self._lock)
        # Bookkeeping for invariant checks.
        self.grant_log: list[_GrantLogEntry] = []
        self.delivery_log: list[_DeliveryLogEntry] = []
        self.enqueued: int = 0
        self.same_time_deliveries: int = 0

    # -- federation management -------------------------------------------

    def join(self, som: Som, lookahead: int = 0,
             reception_mode: ReceptionMode = ReceptionMode.TIME_STEPPED) -> FederateHandle:
        with self._lock:
            if som.federate_name in self._federates:
                raise JoinError(f"duplicate federate name {som.federate_name!r}")
            if lookahead < 0:
                raise TimeManagementError("lookahead must be >= 0")
            fom_classes = {o.class_name: o.attr_names() for o in self.fom.objects}
            for obj in som.objects:
                if obj.class_name not in fom_classes:
                    raise JoinError(f"class {obj.class_name!r} is not in the federation object model")
                for attr in sorted(obj.attr_names()):
                    if attr not in fom_classes[obj.class_name]:
                        raise JoinError(
                            f"attribute {attr!r} of class {obj.class_name!r} "
                            f"is not in the federation object model")
            handle = FederateHandle(som.federate_name, lookahead, reception_mode,
                                    join_seq=len(self._federates))
            handle.published = som.published
            handle.subscribed = som.subscribed
            self._federates[som.federate_name] = handle
            self._inboxes[som.federate_name] = []
            self._cond.notify_all()
            return handle

    def resign(self, f: FederateHandle) -> None:
        with self._lock:
            f.resigned = True
            f.pending_request = None
            self._cond.notify_all()

    def enable_lookahead_compensation(self, f: FederateHandle) -> None:
        with self._lock:
            if f.lookahead <= 0:
                raise TimeManagementError(
                    f"{f.name}: compensation requires a positive lookahead, nothing to compensate")
            f.compensated = True

    # -- object management --------------------------------------------------

    def update_attribute(self, f: FederateHandle, attr: str, value: Any,
                         send_time: SimTime) -> None:
        with self._lock:
            check_time(send_time)
            if attr not in f.published:
                raise PublicationError(f"{f.name}: attribute {attr!r} is not published")
            if send_time != f.granted_time:
                raise PublicationError(
                    f"{f.name}: stale send time {send_time} (granted time is {f.granted_time})")
            delivery = send_time + f.lookahead
            for g in self._federates.values():
                if g.resigned or g is f or attr not in g.subscribed:
                    continue
                msg = TimestampedMessage(sender=f.name, attribute=attr, value=value,
                                         send_time=send_time, delivery_time=delivery,
                                         seq=self._seq)
                self._seq += 1
                self.enqueued += 1
                if delivery <= g.granted_time:
                    # Same-instant delivery: legal (delivery time is not in the
                    # receiver's past strictly), but the receiver has already
                    # processed this instant, so flag it.
                    self.same_time_deliveries += 1
                    self._release(g, [msg])
                else:
                    self._inboxes[g.name].append(msg)
            self._cond.notify_all()

    # -- time management -----------------------------------------------------

    def lbts(self, f: FederateHandle) -> float:
        with self._lock:
            bounds = [g.regulating_bound() for g in self._federates.values()
                      if g is not f and not g.resigned]
            return min(bounds) if bounds else math.inf

    def time_advance_request(self, f: FederateHandle, t: SimTime) -> Grant | None:
        """Register a request; returns the grant immediately if it is safe
        and no driver owns grant sequencing, else None (grant comes later)."""
        with self._lock:
            check_time(t)
            if f.resigned:
                raise TimeManagementError(f"{f.name}: resigned federates cannot advance")
            if t <= f.granted_time:
                raise TimeManagementError(
                    f"{f.name}: request for t={t} is not beyond granted time {f.granted_time}")
            if f.pending_request is not None:
                raise TimeManagementError(
                    f"{f.name}: overlapping requests ({f.pending_request} still pending)")
            f.pending_request = t
            self._cond.notify_all()
            if self._adapters:
                return None  # a driver sequences grants
            if self._grantable(f):
                return self._issue_grant(f)
            return None

    def _effective_request(self, f: FederateHandle) -> SimTime:
        """The time a grant would be issued at: event-responsive federates
        are pulled back to the earliest pending delivery."""
        t = f.pending_request
        assert t is not None
        if f.reception_mode is ReceptionMode.EVENT_RESPONSIVE:
            inbox = self._inboxes[f.name]
            if inbox:
                earliest = min(m.delivery_time for m in inbox)
                if f.granted_time < earliest < t:
                    return earliest
        return t

    def _grantable(self, f: FederateHandle) -> bool:
        return f.receive_window(self._effective_request(f)) <= self.lbts(f)

    def poll_grant(self, f: FederateHandle) -> Grant | None:
        """Driverless re-check: issue the pending grant if it became safe."""
        with self._lock:
            if f.pending_request is None or self._adapters:
                return None
            if self._grantable(f):
                return self._issue_grant(f)
            return None

    def _issue_grant(self, f: FederateHandle) -> Grant:
        t = self._effective_request(f)
        inbox = self._inboxes[f.name]
        window = f.receive_window(t)
        others = tuple((g.name, g.granted_time, g.pending_request, g.lookahead)
                       for g in self._federates.values() if g is not f and not g.resigned)
        self.grant_log.append(_GrantLogEntry(
            federate=f.name, time=t, window=window, lbts=self.lbts(f), others=others))
        ready = [m for m in inbox if m.delivery_time <= window]
        inbox[:] = [m for m in inbox if m.delivery_time > window]
        ready.sort(key=lambda m: (m.delivery_time, m.seq))
        # Reflections are handed over before the grant takes effect, so no
        # federate ever sees a delivery time behind its granted time.
        released = self._release(f, ready)
        f.pending_request = None
        f.granted_time = t
        self._cond.notify_all()
        return Grant(time=t, messages=tuple(released))

    def _release(self, f: FederateHandle, msgs: list[TimestampedMessage]) -> list[TimestampedMessage]:
        """Hand messages to a federate, applying its reception mode."""
        if not msgs:
            return []
        if f.reception_mode is ReceptionMode.TIME_STEPPED:
            latest: dict[str, TimestampedMessage] = {}
            for m in msgs:
                latest[m.attribute] = m  # msgs arrive (delivery, seq)-sorted
            consumed = {m.seq for m in latest.values()}
        else:
            consumed = {m.seq for m in msgs}
        out = []
        for m in msgs:
            status = "consumed" if m.seq in consumed else "superseded"
            self.delivery_log.append(_DeliveryLogEntry(
                seq=m.seq, receiver=f.name, delivery_time=m.delivery_time,
                receiver_granted=f.granted_time, status=status))
            if status == "consumed":
                out.append(m)
        cb = self._deliver_cb.get(f.name)
        if cb is not None and out:
            cb(out)
        return out

    # -- driver integration ---------------------------------------------------

    def register_adapter(self, adapter: "FederateAdapter") -> None:
        with self._lock:
            name = adapter.handle.name
            if name in self._adapters:
                raise JoinError(f"adapter already registered for {name!r}")
            self._adapters[name] = adapter
            self._deliver_cb[name] = adapter.on_deliver

    @property
    def federates(self) -> list[FederateHandle]:
        return sorted(self._federates.values(), key=lambda f: f.join_seq)

    def pending_messages(self) -> int:
        with self._lock:
            return sum(len(q) for q in self._inboxes.values())

    def diagnostic(self) -> str:
        lines = []
        for f in self.federates:
            lines.append(f"  {f.name}: granted={f.granted_time} lookahead={f.lookahead} "
                         f"pending={f.pending_request} resigned={f.resigned}")
        return "\n".join(lines)


def create_federation(fom: Fom) -> Federation:
    return Federation(fom)


class FederateAdapter:
    """Base class for in-process federates driven by run_federation.

    Subclasses implement begin (initial publishes plus first request) and
    on_grant (one slot of work: consume deliveries, advance the model,
    publish, request again or resign).
    """

    def __init__(self, handle: FederateHandle) -> None:
        self.handle = handle
        self.finished = False
        self._received: list[TimestampedMessage] = []

    def on_deliver(self, msgs: list[TimestampedMessage]) -> None:
        self._received.extend(msgs)

    def begin(self, federation: Federation, trace: Trace, horizon: SimTime) -> None:
        raise NotImplementedError

    def on_grant(self, federation: Federation, grant: Grant) -> None:
        raise NotImplementedError


class ExternalFederate:
    """Driver-side stand-in for a federate living behind a connection.

    on_grant forwards the grant out-of-process (via the supplied callback)
    and returns immediately; the driver then waits for the remote side to
    request again or resign.
    """

    def __init__(self, handle: FederateHandle,
                 send_grant: Callable[[Grant], None],
                 send_reflect: Callable[[list[TimestampedMessage]], None]) -> None:
        self.handle = handle
        self.finished = False
        self._send_grant = send_grant
        self._send_reflect = send_reflect

    def on_deliver(self, msgs: list[TimestampedMessage]) -> None:
        self._send_reflect(msgs)

    def begin(self, federation: Federation, trace: Trace, horizon: SimTime) -> None:
        pass  # the remote side drives itself

    def on_grant(self, federation: Federation, grant: Grant) -> None:
        self._send_grant(grant)


def run_federation(federation: Federation, horizon: SimTime,
                   external_timeout: float = 30.0) -> Trace:
    """Drive every registered federate to the horizon and merge the trace.

    Grants are issued one at a time in (time, join order); an in-process
    adapter's slot runs inline, an external federate's slot is awaited.  If
    no grant is issuable and every federate is blocked, the run aborts with
    a diagnostic listing each federate's time and lookahead.
    """
    check_time(horizon)
    trace = Trace()
    with federation._cond:
        adapters = [federation._adapters[f.name] for f in federation.federates
                    if f.name in federation._adapters]
        if not adapters:
            raise RtiError("no federates joined")
        for adapter in adapters:
            adapter.begin(federation, trace, horizon)
        # External federates run their first slot on their own; hold off all
        # grants until each has either requested an advance or resigned, so
        # startup interleaving cannot influence the first deliveries.
        for adapter in adapters:
            if isinstance(adapter, ExternalFederate):
                f = adapter.handle
                while f.pending_request is None and not f.resigned:
                    if not federation._cond.wait(timeout=external_timeout):
                        raise DeadlockError(
                            f"external federate {f.name!r} never made its first request:\n"
                            + federation.diagnostic())
        while True:
            feds = [f for f in federation.federates if not f.resigned]
            if not feds:
                break
            candidates = [f for f in feds if f.pending_request is not None
                          and federation._grantable(f)]
            if candidates:
                f = min(candidates, key=lambda g: (g.pending_request, g.join_seq))
                grant = federation._issue_grant(f)
                adapter = federation._adapters[f.name]
                adapter.on_grant(federation, grant)
                if isinstance(adapter, ExternalFederate):
                    _await_external(federation, f, external_timeout)
                continue
            blocked = [f for f in feds if f.pending_request is not None]
            if blocked and all(f.pending_request is not None for f in feds):
                raise DeadlockError(
                    "no grant is issuable and all federates are blocked:\n"
                    + federation.diagnostic())
            external_waiting = [f for f in feds
                                if isinstance(federation._adapters.get(f.name), ExternalFederate)]
            if external_waiting:
                if not federation._cond.wait(timeout=external_timeout):
                    raise DeadlockError(
                        "timed out waiting for external federates:\n" + federation.diagnostic())
                continue
            raise DeadlockError(
                "federates are blocked without pending requests:\n" + federation.diagnostic())
    return trace


def _await_external(federation: Federation, f: FederateHandle, timeout: float) -> None:
    deadline = timeout
    while f.pending_request is None and not f.resigned:
        if not federation._cond.wait(timeout=deadline):
            raise DeadlockError(
                f"external federate {f.name!r} neither requested nor resigned:\n"
                + federation.diagnostic())
