"""Newline-delimited JSON protocol for out-of-process simulators.

One UTF-8 JSON object per LF-terminated line; requests and responses
correlate by id, callbacks carry id 0.  Every timestamp on the wire is an
integer millisecond count.  A connection opens with a hello request naming
the protocol version ("1") and the peer's role:

* component: the orchestrating side then drives the remote simulator with
  init/create/step/get_data requests, so an external simulator is
  indistinguishable from an in-process one at the scheduler level;
* federate: the remote side drives itself with join/update/tar/resign
  requests and receives grant and reflect callbacks.

One connection per simulator or federate; no TLS, no reconnection.
"""

from __future__ import annotations

import json
import re
import socket
import threading
from dataclasses import dataclass
from typing import Any, Callable

from .rti import ExternalFederate, Federation, RtiError, som_from_dict
from .simapi import MetaDescription, ModelMeta, SimApiError
from .timebase import SimTime

PROTOCOL_VERSION = "1"
KINDS = ("request", "response", "callback")


class WireError(Exception):
    pass


class FrameError(WireError):
    pass


class RemoteSimulatorError(SimApiError):
    """An error response from an external simulator."""


@dataclass(frozen=True)
class Frame:
    id: int
    kind: str
    op: str
    payload: dict

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise FrameError(f"unknown frame kind {self.kind!r}")
        if self.kind == "callback" and self.id != 0:
            raise FrameError("callbacks carry id 0")
        if not isinstance(self.id, int) or isinstance(self.id, bool) or self.id < 0:
            raise FrameError(f"frame id must be a non-negative integer, got {self.id!r}")
        if not isinstance(self.op, str) or not self.op:
            raise FrameError("frame op must be a non-empty string")
        if not isinstance(self.payload, dict):
            raise FrameError("frame payload must be an object")


def encode_frame(frame: Frame) -> bytes:
    doc = {"id": frame.id, "kind": frame.kind, "op": frame.op, "payload": frame.payload}
    return json.dumps(doc, separators=(",", ":")).encode("utf-8") + b"\n"


def decode_frame(line: bytes | str) -> Frame:
    if isinstance(line, bytes):
        try:
            line = line.decode("utf-8")
        except UnicodeDecodeError as e:
            raise FrameError(f"frame is not UTF-8: {e}") from e
    try:
        doc = json.loads(line)
    except json.JSONDecodeError as e:
        raise FrameError(f"frame is not valid JSON: {e}") from e
    if not isinstance(doc, dict):
        raise FrameError("frame must be a JSON object")
    try:
        return Frame(id=doc["id"], kind=doc["kind"], op=doc["op"],
                     payload=doc.get("payload", {}))
    except KeyError as e:
        raise FrameError(f"frame is missing field {e}") from e


def salvage_id(line: bytes | str) -> int:
    """Best-effort id recovery from a malformed line, for error responses."""
    if isinstance(line, bytes):
        line = line.decode("utf-8", errors="replace")
    try:
        doc = json.loads(line)
        ident = doc.get("id", 0) if isinstance(doc, dict) else 0
        return ident if isinstance(ident, int) and ident >= 0 else 0
    except Exception:
        m = re.search(r'"id"\s*:\s*(\d+)', line)
        return int(m.group(1)) if m else 0


class _Conn:
    """One socket, framed line I/O, writes serialized across threads."""

    def __init__(self, sock: socket.socket, timeout: float) -> None:
        sock.settimeout(timeout)
        self.sock = sock
        self.reader = sock.makefile("rb")
        self._wlock = threading.Lock()

    def send(self, frame: Frame) -> None:
        data = encode_frame(frame)
        with self._wlock:
            self.sock.sendall(data)

    def recv_line(self) -> bytes | None:
        line = self.reader.readline()
        return line if line else None

    def recv(self) -> Frame | None:
        line = self.recv_line()
        return None if line is None else decode_frame(line)

    def close(self) -> None:
        try:
            self.reader.close()
        except OSError:
            pass
        try:
            self.sock.close()
        except OSError:
            pass


def _error_response(ident: int, message: str, category: str = "error") -> Frame:
    return Frame(id=ident, kind="response", op="error",
                 payload={"message": message, "category": category})


def _handshake(conn: _Conn, expected_role: str) -> dict:
    """Server side of the hello exchange; malformed lines get an error
    response and the connection stays open for another attempt."""
    while True:
        line = conn.recv_line()
        if line is None:
            raise WireError("connection closed during handshake")
        try:
            frame = decode_frame(line)
        except FrameError as e:
            conn.send(_error_response(salvage_id(line), str(e), "malformed-frame"))
            continue
        if frame.kind != "request" or frame.op != "hello":
            conn.send(_error_response(frame.id, "expected a hello request", "protocol"))
            continue
        version = frame.payload.get("version")
        role = frame.payload.get("role")
        if version != PROTOCOL_VERSION:
            conn.send(_error_response(frame.id, f"unsupported protocol version {version!r}",
                                      "version"))
            raise WireError(f"peer offered unsupported protocol version {version!r}")
        if role != expected_role:
            conn.send(_error_response(frame.id, f"expected role {expected_role!r}, got {role!r}",
                                      "role"))
            raise WireError(f"peer offered role {role!r}, expected {expected_role!r}")
        conn.send(Frame(id=frame.id, kind="response", op="hello",
                        payload={"version": PROTOCOL_VERSION}))
        return frame.payload


# -- component role ------------------------------------------------------------

class RemoteSimulator:
    """Scheduler-side proxy for a simulator living behind a connection."""

    def __init__(self, conn: _Conn, simulator_id: str, input_sampling: dict[str, str]) -> None:
        self._conn = conn
        self.simulator_id = simulator_id
        self.input_sampling = input_sampling
        self._next_id = 1
        self._clock: SimTime = 0
        self._step_size: SimTime | None = None
        self._meta_cache: MetaDescription | None = None
        self.entities: list[dict] = []

    def _call(self, op: str, payload: dict) -> dict:
        ident = self._next_id
        self._next_id += 1
        try:
            self._conn.send(Frame(id=ident, kind="request", op=op, payload=payload))
            while True:
                frame = self._conn.recv()
                if frame is None:
                    raise WireError(f"{self.simulator_id}: connection closed awaiting {op!r}")
                if frame.kind != "response" or frame.id != ident:
                    continue  # stray frame; responses are strictly sequential
                if frame.op == "error":
                    raise RemoteSimulatorError(
                        f"{self.simulator_id}: {frame.payload.get('category', 'error')}: "
                        f"{frame.payload.get('message', '')}")
                return frame.payload
        except (OSError, socket.timeout) as e:
            raise WireError(f"{self.simulator_id}: transport failure during {op!r}: {e}") from e

    def init(self, step_size: SimTime, config: dict | None = None) -> MetaDescription:
        payload = self._call("init", {"step_size": step_size, "config": config or {}})
        models = tuple(ModelMeta(model_name=m["model_name"], params=tuple(m["params"]),
                                 attrs=tuple(m["attrs"]))
                       for m in payload["meta"]["models"])
        self._meta_cache = MetaDescription(models=models)
        self._step_size = step_size
        return self._meta_cache

    def create(self, model: str, params: dict | None = None) -> Any:
        from .simapi import EntityId
        payload = self._call("create", {"model": model, "params": params or {}})
        entity = EntityId(payload["entity"]["simulator_id"],
                          int(payload["entity"]["entity_index"]))
        self.entities.append(entity)
        return entity

    def step(self, t: SimTime, inputs: dict | None = None) -> SimTime:
        payload = self._call("step", {"t": t, "inputs": inputs or {}})
        self._clock = int(payload["next"])
        return self._clock

    def get_data(self, entity: Any, attrs: list[str]) -> dict:
        doc = {"simulator_id": entity.simulator_id, "entity_index": entity.entity_index}
        payload = self._call("get_data", {"entity": doc, "attrs": list(attrs)})
        return payload["data"]

    def stop(self) -> None:
        try:
            self._call("stop", {})
        except WireError:
            pass
        self._conn.close()

    @property
    def clock(self) -> SimTime:
        return self._clock

    @property
    def step_size(self) -> SimTime:
        assert self._step_size is not None
        return self._step_size


class ComponentServer:
    """Accepts one connection per external simulator."""

    def __init__(self, host: str = "127.0.0.1", port: int = 0, timeout: float = 30.0) -> None:
        self._listener = socket.create_server((host, port))
        self._listener.settimeout(timeout)
        self.timeout = timeout
        self.host, self.port = self._listener.getsockname()[:2]

    def accept(self) -> RemoteSimulator:
        sock, _addr = self._listener.accept()
        conn = _Conn(sock, self.timeout)
        hello = _handshake(conn, "component")
        name = hello.get("name", "remote")
        sampling = dict(hello.get("sampling", {}))
        return RemoteSimulator(conn, name, sampling)

    def close(self) -> None:
        self._listener.close()


def serve_component(host: str, port: int, expected: list[str],
                    timeout: float = 30.0) -> tuple[ComponentServer, dict[str, RemoteSimulator]]:
    """Listen and collect one external simulator per expected name."""
    server = ComponentServer(host, port, timeout)
    sims: dict[str, RemoteSimulator] = {}
    try:
        for _ in expected:
            sim = server.accept()
            if sim.simulator_id not in expected:
                raise WireError(f"unexpected simulator {sim.simulator_id!r}; expected {expected}")
            if sim.simulator_id in sims:
                raise WireError(f"duplicate simulator {sim.simulator_id!r}")
            sims[sim.simulator_id] = sim
    except Exception:
        server.close()
        raise
    return server, sims


# -- federate role ---------------------------------------------------------------

class RemoteFederateSession:
    """Server-side record of one connected external federate."""

    def __init__(self, conn: _Conn, server: "FederateServer") -> None:
        self.conn = conn
        self.server = server
        self.name: str | None = None
        self.updates: list[tuple[str, Any, SimTime]] = []  # attr, value, send_time
        self.joined = threading.Event()
        self.closed = threading.Event()
        self.error: Exception | None = None
        self.thread = threading.Thread(target=self._serve, daemon=True)

    def _serve(self) -> None:
        federation = self.server.federation
        handle = None
        try:
            while True:
                line = self.conn.recv_line()
                if line is None:
                    break
                try:
                    frame = decode_frame(line)
                except FrameError as e:
                    self.conn.send(_error_response(salvage_id(line), str(e), "malformed-frame"))
                    continue
                if frame.kind != "request":
                    continue
                op, payload, ident = frame.op, frame.payload, frame.id
                try:
                    if op == "join":
                        som = som_from_dict(payload["som"])
                        handle = federation.join(som, lookahead=self.server.lookahead,
                                                 reception_mode=self.server.reception_mode)
                        if self.server.compensate:
                            federation.enable_lookahead_compensation(handle)
                        adapter = ExternalFederate(handle, self._send_grant, self._send_reflect)
                        federation.register_adapter(adapter)
                        self.name = handle.name
                        reply = {"federate": handle.name, "horizon": self.server.horizon,
                                 "lookahead": handle.lookahead}
                        reply.update(self.server.join_info)
                        self.conn.send(Frame(id=ident, kind="response", op="join", payload=reply))
                        self.joined.set()
                    elif handle is None:
                        self.conn.send(_error_response(ident, f"{op!r} before join", "not-joined"))
                    elif op == "update":
                        federation.update_attribute(handle, payload["attr"], payload["value"],
                                                    send_time=int(payload["send_time"]))
                        self.updates.append((payload["attr"], payload["value"],
                                             int(payload["send_time"])))
                        self.conn.send(Frame(id=ident, kind="response", op="update", payload={}))
                    elif op == "tar":
                        federation.time_advance_request(handle, int(payload["t"]))
                        self.conn.send(Frame(id=ident, kind="response", op="tar", payload={}))
                    elif op == "resign":
                        federation.resign(handle)
                        self.conn.send(Frame(id=ident, kind="response", op="resign", payload={}))
                    else:
                        self.conn.send(_error_response(ident, f"unknown op {op!r}", "protocol"))
                except RtiError as e:
                    self.conn.send(_error_response(ident, str(e), type(e).__name__))
        except (OSError, socket.timeout) as e:
            self.error = e
        finally:
            if handle is not None and not handle.resigned:
                federation.resign(handle)
            self.closed.set()

    def _send_grant(self, grant) -> None:
        self.conn.send(Frame(id=0, kind="callback", op="grant", payload={"t": grant.time}))

    def _send_reflect(self, msgs) -> None:
        for m in msgs:
            self.conn.send(Frame(id=0, kind="callback", op="reflect",
                                 payload={"attr": m.attribute, "value": m.value,
                                          "time": m.delivery_time, "sender": m.sender,
                                          "sent": m.send_time}))


class FederateServer:
    """Exposes a federation's services to external federates."""

    def __init__(self, federation: Federation, horizon: SimTime,
                 lookahead: int = 0, compensate: bool = False,
                 join_info: dict | None = None,
                 host: str = "127.0.0.1", port: int = 0, timeout: float = 30.0) -> None:
        from .rti import ReceptionMode
        self.federation = federation
        self.horizon = horizon
        self.lookahead = lookahead
        self.compensate = compensate
        self.reception_mode = ReceptionMode.TIME_STEPPED
        self.join_info = join_info or {}
        self.timeout = timeout
        self._listener = socket.create_server((host, port))
        self._listener.settimeout(timeout)
        self.host, self.port = self._listener.getsockname()[:2]
        self.sessions: list[RemoteFederateSession] = []

    def accept_one(self) -> RemoteFederateSession:
        sock, _addr = self._listener.accept()
        conn = _Conn(sock, self.timeout)
        _handshake(conn, "federate")
        session = RemoteFederateSession(conn, self)
        session.thread.start()
        self.sessions.append(session)
        return session

    def close(self) -> None:
        self._listener.close()
        for s in self.sessions:
            s.conn.close()


def serve_federate(host: str, port: int, federation: Federation, horizon: SimTime,
                   **kwargs) -> FederateServer:
    return FederateServer(federation, horizon, host=host, port=port, **kwargs)
