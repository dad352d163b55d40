"""Command line front end.

Subcommands:
  run        one test case on either backend, trace + summary + figures
  run-all    monolithic reference plus TC1-TC6 on both backends
  calibrate  pin the gust onset to a target crossing time, write params
  serve      host one side of the wire protocol for an external peer

Exit status is nonzero whenever a run violates a timing invariant.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .. import models, rti, scheduler, wire
from ..timebase import MS_PER_SECOND, parse_duration
from ..trace import Trace
from . import cases, federates, report
from .cases import (CROSSING_TARGET, DEFAULT_HORIZON, TEST_CASES, EventTiming,
                    TestCase, extract_events)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as e:  # surface one clean line, keep nonzero exit
        print(f"error: {e}", file=sys.stderr)
        return 2


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="stormsim",
                                description="Dual-backend co-simulation of turbine storm control")
    sub = p.add_subparsers(required=True)

    run = sub.add_parser("run", help="run a single test case")
    run.add_argument("--case", required=True, choices=sorted(TEST_CASES))
    run.add_argument("--backend", default="scheduler", choices=("scheduler", "rti"))
    run.add_argument("--lookahead", type=int, default=1, metavar="STEPS",
                     help="rti lookahead in steps of each federate's own size")
    run.add_argument("--compensate", action="store_true",
                     help="rti: lag bus time one step behind simulator time")
    run.add_argument("--horizon", default=None, help='e.g. "10s" or "10000ms"')
    run.add_argument("--params", default=None, help="plant parameter file (key=value)")
    run.add_argument("--out", required=True)
    run.set_defaults(func=cmd_run)

    run_all = sub.add_parser("run-all", help="monolithic + TC1-TC6 on both backends")
    run_all.add_argument("--horizon", default=None)
    run_all.add_argument("--lookahead", type=int, default=1)
    run_all.add_argument("--compensate", action="store_true")
    run_all.add_argument("--params", default=None)
    run_all.add_argument("--out", required=True)
    run_all.set_defaults(func=cmd_run_all)

    cal = sub.add_parser("calibrate", help="pin gust onset to a target crossing time")
    cal.add_argument("--target", default="2.419", help="crossing time, seconds or ms")
    cal.add_argument("--out", required=True, help="parameter file to write")
    cal.set_defaults(func=cmd_calibrate)

    serve = sub.add_parser("serve", help="host the wire protocol for an external controller")
    serve.add_argument("--role", required=True, choices=("component", "federate"))
    serve.add_argument("--case", default="TC4", choices=sorted(TEST_CASES))
    serve.add_argument("--port", type=int, default=0)
    serve.add_argument("--lookahead", type=int, default=0)
    serve.add_argument("--compensate", action="store_true")
    serve.add_argument("--horizon", default=None)
    serve.add_argument("--params", default=None)
    serve.add_argument("--timeout", type=float, default=60.0)
    serve.add_argument("--out", required=True)
    serve.set_defaults(func=cmd_serve)
    return p


def _common(args) -> tuple[models.PlantParams, int]:
    params = cases.load_params(args.params) if args.params else cases.default_params()
    horizon = parse_duration(args.horizon) if args.horizon else DEFAULT_HORIZON
    return params, horizon


def cmd_run(args) -> int:
    params, horizon = _common(args)
    tc = TEST_CASES[args.case]
    if args.backend == "rti":
        tc = cases.TestCase(tc.id, tc.mode, tc.plant_dt, tc.controller_dt, backend="rti",
                            lookahead_steps=args.lookahead, compensate=args.compensate)
    trace, events = cases.run_test_case(tc, params, horizon)
    results = {tc.label: (trace, events)}
    report.emit_outputs(results, args.out)
    print(_event_line(tc.label, events))
    return 0


def cmd_run_all(args) -> int:
    params, horizon = _common(args)
    results: dict[str, tuple[Trace, EventTiming]] = {}
    results["Sim"] = cases.run_monolithic_reference(params, horizon)
    for case_id in sorted(TEST_CASES):
        tc = TEST_CASES[case_id]
        results[tc.label] = cases.run_test_case(tc, params, horizon)
    for case_id in sorted(TEST_CASES):
        base = TEST_CASES[case_id]
        tc = cases.TestCase(base.id, base.mode, base.plant_dt, base.controller_dt,
                            backend="rti", lookahead_steps=args.lookahead,
                            compensate=args.compensate)
        results[tc.label] = cases.run_test_case(tc, params, horizon)
    paths = report.emit_outputs(results, args.out)
    for label, (_t, events) in results.items():
        print(_event_line(label, events))
    print(f"wrote {len(paths)} files under {args.out}")
    violations = _check_orderings(results)
    for v in violations:
        print(f"invariant violated: {v}", file=sys.stderr)
    return 1 if violations else 0


def _check_orderings(results) -> list[str]:
    """The qualitative timing relations the summary must satisfy."""
    out = []
    ref = CROSSING_TARGET

    def err(label: str) -> int | None:
        if label not in results:
            return None
        return results[label][1].total_error(ref)

    sched = {c: err(f"{c}/scheduler") for c in TEST_CASES}
    if any(v is None for v in sched.values()):
        out.append("missing events in a scheduler test case")
        return out
    if not all(sched["TC4"] < sched[c] for c in ("TC1", "TC2", "TC3", "TC5", "TC6")):
        out.append(f"TC4 summed error {sched['TC4']} is not strictly minimal: {sched}")
    for serial, parallel in (("TC4", "TC1"), ("TC5", "TC2"), ("TC6", "TC3")):
        ev_s, ev_p = results[f"{serial}/scheduler"][1], results[f"{parallel}/scheduler"][1]
        for name in report.EVENT_NAMES:
            ds = abs(getattr(ev_s, name) - ref)
            dp = abs(getattr(ev_p, name) - ref)
            if ds > dp:
                out.append(f"{serial} {name} error {ds} exceeds {parallel}'s {dp}")
    if sched["TC4"] >= sched["TC5"]:
        out.append(f"TC4 error {sched['TC4']} not below TC5 error {sched['TC5']}")
    return out


def _event_line(label: str, events: EventTiming) -> str:
    def s(t):
        return "-" if t is None else f"{t / MS_PER_SECOND:.3f}s"

    return (f"{label:<16} crossing={s(events.crossing)} trigger={s(events.trigger)} "
            f"response={s(events.response)}")


def cmd_calibrate(args) -> int:
    target = parse_duration(args.target)
    params = models.calibrate(models.PlantParams(), target)
    cases.save_params(params, args.out)
    print(f"gust_start={params.gust_start}ms reproduces crossing at {target}ms; wrote {args.out}")
    return 0


def cmd_serve(args) -> int:
    params, horizon = _common(args)
    tc = TEST_CASES[args.case]
    out = Path(args.out)
    if args.role == "component":
        return _serve_component(args, tc, params, horizon, out)
    return _serve_federate(args, tc, params, horizon, out)


def _serve_component(args, tc: TestCase, params, horizon, out: Path) -> int:
    server = wire.ComponentServer(port=args.port, timeout=args.timeout)
    print(f"component endpoint listening on {server.host}:{server.port}", flush=True)
    try:
        remote = server.accept()
        sc = scheduler.Scenario(horizon=horizon)
        from ..simapi import PlantSimulator
        sc.add_simulator("plant", PlantSimulator("plant"), step_size=tc.plant_dt)
        sc.add_simulator(remote.simulator_id, remote, step_size=tc.controller_dt)
        plant = sc.create("plant", "Plant", federates._params_dict(params))
        ctrl = sc.create(remote.simulator_id, "Controller")
        sc.connect(plant, "omega", ctrl, "omega_in")
        sc.connect(ctrl, "beta_set", plant, "beta_set_in")
        mode = (scheduler.Serial(order=("plant", remote.simulator_id))
                if tc.mode == "serial" else scheduler.Parallel())
        trace = scheduler.run(sc, mode)
        remote.stop()
    finally:
        server.close()
    events = extract_events(trace, params.threshold)
    report.emit_outputs({tc.label: (trace, events)}, out)
    print(_event_line(f"{tc.id}/wire-component", events))
    return 0


def _serve_federate(args, tc: TestCase, params, horizon, out: Path) -> int:
    federation, info = federates.build_turbine_federation(
        params, tc.plant_dt, tc.controller_dt, parallel=(tc.mode == "parallel"),
        lookahead_steps=args.lookahead, compensate=args.compensate,
        external_controller=True)
    server = wire.FederateServer(
        federation, horizon,
        lookahead=args.lookahead * tc.controller_dt,
        compensate=args.compensate,
        join_info=info, port=args.port, timeout=args.timeout)
    print(f"federate endpoint listening on {server.host}:{server.port}", flush=True)
    try:
        session = server.accept_one()
        if not session.joined.wait(timeout=args.timeout):
            raise wire.WireError("external federate did not join in time")
        trace = rti.run_federation(federation, horizon, external_timeout=args.timeout)
        _append_remote_rows(trace, session, info)
    finally:
        server.close()
    events = extract_events(trace, params.threshold)
    report.emit_outputs({f"{tc.id}/rti": (trace, events)}, out)
    print(_event_line(f"{tc.id}/wire-federate", events))
    return 0


def _append_remote_rows(trace: Trace, session: wire.RemoteFederateSession, info: dict) -> None:
    """Rebuild the external controller's rows from its published updates."""
    offset = info["row_offset"]
    rows = {}
    for attr, value, send_time in session.updates:
        if attr == "beta_set":
            rows[send_time + offset] = bool(value)
    if offset > 0 and 0 not in rows:
        rows[0] = False  # initial latched state, before the first decision lands
    name = session.name or "controller"
    for t in sorted(rows):
        trace.add_row(name, t, beta_set=rows[t])


if __name__ == "__main__":
    sys.exit(main())
