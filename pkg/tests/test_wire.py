import threading

import pytest
from hypothesis import given
from hypothesis import strategies as st

import wire_client
from stormsim import rti, scheduler, wire
from stormsim.experiments import cases, federates
from stormsim.experiments.cli import _append_remote_rows
from stormsim.simapi import ControllerSimulator, PlantSimulator
from stormsim.wire import (ComponentServer, FederateServer, Frame, FrameError,
                           decode_frame, encode_frame)

HORIZON = 10_000


json_scalars = st.one_of(st.booleans(), st.integers(min_value=-10**9, max_value=10**9),
                         st.floats(allow_nan=False, allow_infinity=False),
                         st.text(max_size=20))
payloads = st.dictionaries(st.text(min_size=1, max_size=10), json_scalars, max_size=5)


class TestFrames:
    @given(ident=st.integers(min_value=1, max_value=10**9),
           kind=st.sampled_from(["request", "response"]),
           op=st.text(min_size=1, max_size=12), payload=payloads)
    def test_round_trip_identity(self, ident, kind, op, payload):
        frame = Frame(id=ident, kind=kind, op=op, payload=payload)
        assert decode_frame(encode_frame(frame)) == frame

    @given(op=st.text(min_size=1, max_size=12), payload=payloads)
    def test_callback_round_trip(self, op, payload):
        frame = Frame(id=0, kind="callback", op=op, payload=payload)
        assert decode_frame(encode_frame(frame)) == frame

    def test_garbage_rejected(self):
        with pytest.raises(FrameError):
            decode_frame(b"not json at all\n")

    def test_non_object_rejected(self):
        with pytest.raises(FrameError):
            decode_frame(b"[1,2,3]\n")

    def test_callback_with_nonzero_id_rejected(self):
        with pytest.raises(FrameError):
            Frame(id=3, kind="callback", op="grant", payload={})

    def test_unknown_kind_rejected(self):
        with pytest.raises(FrameError):
            decode_frame(b'{"id":1,"kind":"noise","op":"x","payload":{}}\n')


class TestHandshake:
    def test_version_zero_rejected(self):
        server = ComponentServer(port=0, timeout=10)
        result = {}

        def client():
            conn = wire_client.LineSocket(server.host, server.port, timeout=10)
            result["reply"] = wire_client.hello(conn, "component", "x", version="0")
            conn.close()

        t = threading.Thread(target=client)
        t.start()
        with pytest.raises(wire.WireError):
            server.accept()
        t.join()
        server.close()
        assert result["reply"]["op"] == "error"
        assert result["reply"]["payload"]["category"] == "version"

    def test_garbage_line_gets_error_response_and_connection_survives(self):
        server = ComponentServer(port=0, timeout=10)
        result = {}

        def client():
            conn = wire_client.LineSocket(server.host, server.port, timeout=10)
            conn.send_raw(b'{"id": 7, "kind": oops\n')
            result["error_reply"] = conn.recv()
            result["hello_reply"] = wire_client.hello(conn, "component", "late")
            # Keep serving so the server side can be exercised further.
            frame = conn.recv()
            assert frame["op"] == "init"
            conn.send({"id": frame["id"], "kind": "response", "op": "init",
                       "payload": {"meta": {"models": [
                           {"model_name": "M", "params": [], "attrs": ["a"]}]}}})
            conn.close()

        t = threading.Thread(target=client)
        t.start()
        sim = server.accept()
        meta = sim.init(10)
        t.join()
        server.close()
        assert result["error_reply"]["op"] == "error"
        assert result["error_reply"]["id"] == 7  # salvaged from the bad line
        assert result["hello_reply"]["op"] == "hello"
        assert meta.model("M").attrs == ("a",)


class TestComponentRole:
    def test_init_and_step_round_trip(self):
        server = ComponentServer(port=0, timeout=10)
        ctrl = ControllerSimulator("controller")
        t = threading.Thread(target=wire_client.serve_component_simulator,
                             args=(server.host, server.port, ctrl, "controller"))
        t.start()
        remote = server.accept()
        meta = remote.init(20)
        assert "beta_set" in meta.model("Controller").attrs
        remote.create("Controller")
        assert remote.step(0, {"omega_in": 1.11}) == 20
        data = remote.get_data(remote.entities[0], ["beta_set"])
        assert data["beta_set"] is True
        with pytest.raises(wire.RemoteSimulatorError, match="UnknownAttributeError"):
            remote.get_data(remote.entities[0], ["nope"])
        remote.stop()
        t.join()
        server.close()

    def test_transport_transparency_tc4(self, runs, params):
        """Both models over the wire reproduce the in-process TC4 trace."""
        in_process, _ = runs.scheduler("TC4")
        server = ComponentServer(port=0, timeout=30)
        threads = [
            threading.Thread(target=wire_client.serve_component_simulator,
                             args=(server.host, server.port, PlantSimulator("plant"), "plant")),
            threading.Thread(target=wire_client.serve_component_simulator,
                             args=(server.host, server.port,
                                   ControllerSimulator("controller"), "controller")),
        ]
        for t in threads:
            t.start()
        sims = {}
        for _ in threads:
            sim = server.accept()
            sims[sim.simulator_id] = sim
        sc = scheduler.Scenario(horizon=HORIZON)
        sc.add_simulator("plant", sims["plant"], step_size=20)
        sc.add_simulator("controller", sims["controller"], step_size=20)
        plant = sc.create("plant", "Plant", federates._params_dict(params))
        ctrl_e = sc.create("controller", "Controller")
        sc.connect(plant, "omega", ctrl_e, "omega_in")
        sc.connect(ctrl_e, "beta_set", plant, "beta_set_in")
        trace = scheduler.run(sc, scheduler.Serial(order=("plant", "controller")))
        for sim in sims.values():
            sim.stop()
        for t in threads:
            t.join()
        server.close()
        assert trace.to_csv() == in_process.to_csv()


class TestFederateRole:
    def _run_wire_federation(self, params, lookahead_steps, compensate):
        federation, info = federates.build_turbine_federation(
            params, 20, 20, parallel=False, lookahead_steps=lookahead_steps,
            compensate=compensate, external_controller=True)
        server = FederateServer(federation, HORIZON,
                                lookahead=lookahead_steps * 20,
                                compensate=compensate, join_info=info, timeout=30)
        t = threading.Thread(target=wire_client.run_remote_controller,
                             args=(server.host, server.port))
        t.start()
        session = server.accept_one()
        assert session.joined.wait(timeout=30)
        trace = rti.run_federation(federation, HORIZON, external_timeout=30)
        _append_remote_rows(trace, session, info)
        t.join()
        server.close()
        return trace

    def test_grant_and_reflect_flow_matches_in_process(self, runs, params):
        wire_trace = self._run_wire_federation(params, lookahead_steps=0, compensate=False)
        in_process, _ = runs.rti("TC4", lookahead_steps=0)
        assert wire_trace.to_csv() == in_process.to_csv()

    def test_uncompensated_over_wire_matches_in_process(self, runs, params):
        wire_trace = self._run_wire_federation(params, lookahead_steps=1, compensate=False)
        in_process, _ = runs.rti("TC4", lookahead_steps=1)
        assert wire_trace.to_csv() == in_process.to_csv()

    def test_update_before_join_and_unpublished_rejected(self):
        federation, info = federates.build_turbine_federation(
            cases.default_params(), 20, 20, parallel=False, lookahead_steps=0,
            compensate=False, external_controller=True)
        server = FederateServer(federation, 100, join_info=info, timeout=10)
        errors = {}

        def client():
            c = wire_client.FederateClient(server.host, server.port, "controller")
            try:
                c.update("beta_set", False, 0)
            except RuntimeError as e:
                errors["before_join"] = str(e)
            c.join(wire_client.CONTROLLER_SOM_DOC)
            try:
                c.update("omega", 1.0, 0)  # subscribed, not published
            except RuntimeError as e:
                errors["unpublished"] = str(e)
            c.conn.close()

        t = threading.Thread(target=client)
        t.start()
        server.accept_one()
        t.join()
        server.close()
        assert "not-joined" in errors["before_join"]
        assert "PublicationError" in errors["unpublished"]
