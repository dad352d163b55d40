import time
from dataclasses import replace

import pytest

from stormsim import models
from stormsim.models import (ModelError, PlantParams, calibrate, controller_step,
                             initial_controller_state, initial_plant_state,
                             monolithic_crossing, plant_step, run_monolithic,
                             wind_power)


@pytest.fixture(scope="module")
def params():
    return PlantParams()


class TestWindPower:
    def test_pre_gust_flat(self, params):
        assert wind_power(params, 0) == params.base_power
        assert wind_power(params, params.gust_start) == params.base_power

    def test_ramp_is_monotone_and_saturates(self, params):
        values = [wind_power(params, t) for t in range(0, 8000, 10)]
        assert all(b >= a for a, b in zip(values, values[1:]))
        peak = wind_power(params, 8000)
        assert peak == wind_power(params, 9000)  # saturated
        assert peak > params.base_power

    def test_zero_ramp_never_fires(self):
        p = replace(PlantParams(), gust_ramp=0.0)
        assert monolithic_crossing(p, 10_000) is None


class TestPlantStep:
    def test_servo_disabled_keeps_beta(self, params):
        s = initial_plant_state(params)
        s2 = plant_step(s, params, 20)
        assert s2.beta == 0.0
        assert s2.t == 20

    def test_servo_saturates_at_beta_max(self, params):
        s = replace(initial_plant_state(params), beta=params.beta_max, beta_set_in=True)
        s2 = plant_step(s, params, 20)
        assert s2.beta == params.beta_max

    def test_servo_ramps_at_fixed_rate(self, params):
        s = replace(initial_plant_state(params), beta_set_in=True)
        s2 = plant_step(s, params, 20)
        assert s2.beta == pytest.approx(params.servo_rate * 0.020)

    def test_equilibrium_before_gust(self, params):
        s = initial_plant_state(params)
        for _ in range(10):
            s = plant_step(s, params, 20)
        assert s.omega == pytest.approx(params.base_power, abs=1e-12)

    def test_power_bounds(self, params):
        s = replace(initial_plant_state(params), beta_set_in=True)
        for _ in range(600):
            s = plant_step(s, params, 20)
            assert 0.0 <= s.p_shaft <= s.p_wind

    def test_beta_nondecreasing_once_enabled(self, params):
        s = replace(initial_plant_state(params), beta_set_in=True)
        betas = []
        for _ in range(400):
            s = plant_step(s, params, 15)
            betas.append(s.beta)
        assert all(b >= a for a, b in zip(betas, betas[1:]))


class TestControllerStep:
    def test_below_threshold(self):
        s = initial_controller_state(PlantParams())
        s2 = controller_step(s, 1.05, 20)
        assert not s2.beta_set

    def test_above_threshold(self):
        s = initial_controller_state(PlantParams())
        s2 = controller_step(s, 1.11, 20)
        assert s2.beta_set

    def test_latch_holds(self):
        s = initial_controller_state(PlantParams())
        s = controller_step(s, 1.11, 20)
        s = controller_step(s, 0.90, 20)
        assert s.beta_set


class TestMonolithic:
    def test_crossing_anchor(self, params):
        assert monolithic_crossing(params, 6000) == 2419

    def test_all_three_events_share_timestamp(self, params):
        from stormsim.experiments.cases import extract_events
        trace = run_monolithic(params, 4000)
        ev = extract_events(trace, params.threshold)
        assert ev.crossing == ev.trigger == ev.response == 2419

    def test_zero_gust_no_events(self):
        from stormsim.experiments.cases import extract_events
        p = replace(PlantParams(), gust_ramp=0.0)
        trace = run_monolithic(p, 3000)
        ev = extract_events(trace, p.threshold)
        assert ev.crossing is None and ev.trigger is None and ev.response is None

    def test_runtime_budget(self, params):
        t0 = time.monotonic()
        run_monolithic(params, 10_000)
        assert time.monotonic() - t0 < 5.0

    def test_determinism(self, params):
        a = run_monolithic(params, 3000)
        b = run_monolithic(params, 3000)
        assert a.to_csv() == b.to_csv()

    def test_grid_refinement_moves_crossing_at_most_one_coarse_step(self, params):
        coarse = monolithic_crossing(params, 6000, h=2)
        fine = monolithic_crossing(params, 6000, h=1)
        assert coarse is not None and fine is not None
        assert abs(coarse - fine) <= 2

    def test_shaft_power_shape(self, params):
        """Monotone rise until the controller responds, then the ratio of
        shaft power to wind power never recovers."""
        from stormsim.experiments.cases import extract_events
        trace = run_monolithic(params, 10_000)
        ev = extract_events(trace, params.threshold)
        assert ev.response is not None
        rows = trace.rows
        pre = [r.p_shaft_ratio * r.p_wind for r in rows if r.time < ev.response]
        assert all(b >= a - 1e-12 for a, b in zip(pre, pre[1:]))
        post = [r.p_shaft_ratio for r in rows if r.time >= ev.response]
        assert all(b <= a + 1e-12 for a, b in zip(post, post[1:]))
        betas = [r.beta for r in rows if r.time >= ev.response]
        assert all(b >= a for a, b in zip(betas, betas[1:]))


class TestCalibrate:
    def test_fixed_point(self, params):
        current = monolithic_crossing(params, 6000)
        assert calibrate(params, current) is params

    def test_hits_target(self):
        p = replace(PlantParams(), gust_start=1200)
        tuned = calibrate(p, 2419)
        assert monolithic_crossing(tuned, 6000) == 2419
        assert tuned.gust_ramp == p.gust_ramp  # only the onset moves

    def test_target_zero_infeasible(self, params):
        with pytest.raises(ModelError):
            calibrate(params, 0)

    def test_unreachably_early_target(self, params):
        with pytest.raises(ModelError):
            calibrate(params, 100)


class TestParamValidation:
    def test_threshold_factor_pinned(self):
        with pytest.raises(ModelError):
            PlantParams(threshold_factor=1.2)

    def test_derating_cannot_go_negative(self):
        with pytest.raises(ModelError):
            PlantParams(beta_max=30.0, derate_slope=0.06)

    def test_negative_damping_rejected(self):
        with pytest.raises(ModelError):
            PlantParams(damping_ratio=-0.1)
