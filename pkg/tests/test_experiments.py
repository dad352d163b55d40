import csv
import io
from dataclasses import replace

import pytest

from stormsim import models
from stormsim.experiments import cases, report
from stormsim.experiments.cli import main as cli_main
from stormsim.trace import Trace


class TestExtractEvents:
    def test_monolithic_all_equal(self, runs):
        _trace, ev = runs.monolithic()
        assert ev.crossing == ev.trigger == ev.response == 2419

    def test_tc4_scheduler(self, runs):
        _trace, ev = runs.scheduler("TC4")
        assert (ev.crossing, ev.trigger, ev.response) == (2420, 2420, 2420)

    def test_zero_gust_absent(self):
        p = replace(models.PlantParams(), gust_ramp=0.0)
        trace = models.run_monolithic(p, 2000)
        ev = cases.extract_events(trace, p.threshold)
        assert (ev.crossing, ev.trigger, ev.response) == (None, None, None)

    def test_event_order_enforced(self):
        with pytest.raises(cases.CaseError):
            cases.EventTiming(crossing=100, trigger=90, response=100)


class TestCompareTraces:
    def test_identical(self, runs):
        trace, _ = runs.scheduler("TC4")
        cmp = cases.compare_traces(trace, trace)
        assert cmp.identical
        assert cmp.event_deltas == {"crossing": 0, "trigger": 0, "response": 0}

    def test_tc4_vs_monolithic_delta_one_ms(self, runs):
        tc4, _ = runs.scheduler("TC4")
        mono, _ = runs.monolithic()
        cmp = cases.compare_traces(tc4, mono)
        assert cmp.event_deltas == {"crossing": 1, "trigger": 1, "response": 1}

    def test_tc5_deltas_at_least_tc4(self, runs):
        mono, _ = runs.monolithic()
        d4 = cases.compare_traces(runs.scheduler("TC4")[0], mono).event_deltas
        d5 = cases.compare_traces(runs.scheduler("TC5")[0], mono).event_deltas
        for name in ("crossing", "trigger", "response"):
            assert abs(d5[name]) >= abs(d4[name])

    def test_divergence_detection(self):
        a = Trace()
        b = Trace()
        for t in (0, 10, 20):
            a.add_row("x", t, omega=1.0, p_wind=1.0)
            b.add_row("x", t, omega=1.0 if t < 20 else 1.5, p_wind=1.0)
        cmp = cases.compare_traces(a, b)
        assert cmp.first_divergence == 20
        assert cmp.max_abs_deviation["omega"] == pytest.approx(0.5)


class TestEmitOutputs:
    def test_file_matrix_and_summary(self, tmp_path, runs):
        results = {"Sim": runs.monolithic()}
        for cid in sorted(cases.TEST_CASES):
            results[f"{cid}/scheduler"] = runs.scheduler(cid)
        for cid in sorted(cases.TEST_CASES):
            results[f"{cid}/rti"] = runs.rti(cid, lookahead_steps=1)
        paths = report.emit_outputs(results, tmp_path)
        traces = sorted(p.name for p in (tmp_path / "traces").glob("*.csv"))
        assert len(traces) == 13
        summary = (tmp_path / "summary.csv").read_text()
        rows = {(r["case"], r["backend"]): r for r in csv.DictReader(io.StringIO(summary))}
        assert rows[("Sim", "monolithic")]["crossing_ms"] == "2419"
        assert rows[("Sim", "monolithic")]["trigger_ms"] == "2419"
        assert rows[("Sim", "monolithic")]["response_ms"] == "2419"
        assert rows[("TC4", "scheduler")]["crossing_ms"] == "2420"
        assert rows[("TC4", "scheduler")]["response_ms"] == "2420"
        assert (tmp_path / "figures" / "event_timing.png").exists()
        assert (tmp_path / "figures" / "shaft_power.png").exists()
        assert (tmp_path / "plot_traces.py").exists()
        assert len(paths) == 13 + 1 + 2 + 1

    def test_absent_events_blank_in_summary(self):
        p = replace(models.PlantParams(), gust_ramp=0.0)
        trace = models.run_monolithic(p, 1000)
        ev = cases.extract_events(trace, p.threshold)
        text = report.render_summary({"Sim": (trace, ev)})
        row = next(csv.DictReader(io.StringIO(text)))
        assert row["crossing_ms"] == "" and row["response_ms"] == ""


class TestParamsFile:
    def test_roundtrip(self, tmp_path, params):
        path = tmp_path / "params.cfg"
        cases.save_params(params, path)
        loaded = cases.load_params(path)
        assert loaded == params

    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_text("voltage=3\n")
        with pytest.raises(cases.CaseError):
            cases.load_params(path)

    def test_comments_and_blanks_ignored(self, tmp_path):
        path = tmp_path / "params.cfg"
        path.write_text("# comment\n\ngust_start=700\n")
        assert cases.load_params(path).gust_start == 700


class TestCli:
    def test_run_tc4(self, tmp_path, capsys):
        rc = cli_main(["run", "--case", "TC4", "--backend", "scheduler",
                       "--horizon", "4s", "--out", str(tmp_path)])
        assert rc == 0
        out = capsys.readouterr().out
        assert "crossing=2.420s" in out and "response=2.420s" in out
        assert (tmp_path / "traces" / "TC4_scheduler.csv").exists()

    def test_calibrate_writes_params(self, tmp_path, capsys):
        rc = cli_main(["calibrate", "--target", "2.419",
                       "--out", str(tmp_path / "params.cfg")])
        assert rc == 0
        loaded = cases.load_params(tmp_path / "params.cfg")
        assert models.monolithic_crossing(loaded, 4000) == 2419

    def test_bad_case_rejected(self, tmp_path):
        with pytest.raises(SystemExit) as exc:
            cli_main(["run", "--case", "TC9", "--out", str(tmp_path)])
        assert exc.value.code == 2


class TestScenarioInvariants:
    def test_tc4_best_sum_error(self, runs):
        totals = {cid: runs.scheduler(cid)[1].total_error(2419)
                  for cid in cases.TEST_CASES}
        assert all(totals["TC4"] < totals[c] for c in totals if c != "TC4"), totals

    def test_serial_dominates_parallel_per_pair(self, runs):
        for serial_id, parallel_id in (("TC4", "TC1"), ("TC5", "TC2"), ("TC6", "TC3")):
            ev_s = runs.scheduler(serial_id)[1]
            ev_p = runs.scheduler(parallel_id)[1]
            for name in ("crossing", "trigger", "response"):
                assert abs(getattr(ev_s, name) - 2419) <= abs(getattr(ev_p, name) - 2419)

    def test_coarser_serial_beats_finer(self, runs):
        assert (runs.scheduler("TC4")[1].total_error(2419)
                < runs.scheduler("TC5")[1].total_error(2419))
