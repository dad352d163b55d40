"""Scheduler event timestamps against the brute-force 1 ms replay oracle."""

from __future__ import annotations

import random

import pytest
from chain_sims import RelaySimulator, SourceSimulator
from oracle import ChainStage, replay_chain

from stormsim import scheduler
from stormsim.scheduler import Parallel, Scenario, Serial


def run_chain_through_scheduler(t_star: int, stages: list[ChainStage], serial: bool,
                                horizon: int) -> list[int | None]:
    sc = Scenario(horizon=horizon)
    names = []
    for i, stage in enumerate(stages):
        name = f"s{i}"
        if i == 0:
            sc.add_simulator(name, SourceSimulator(name, t_star), stage.step)
            sc.create(name, "Source")
        else:
            sc.add_simulator(name, RelaySimulator(name, stage.read_at), stage.step)
            sc.create(name, "Relay")
        names.append(name)
    entities = {n: sc._slot(n).sim.entities[0] for n in names}
    for up, down in zip(names, names[1:]):
        sc.connect(entities[up], "beta_set", entities[down], "beta_set_in")
    mode = Serial(order=tuple(names)) if serial else Parallel(concurrent=False)
    trace = scheduler.run(sc, mode)
    events: list[int | None] = []
    for n in names:
        first = next((r.time for r in trace.rows_for(n) if r.beta_set), None)
        events.append(first)
    return events


@pytest.mark.parametrize("serial", [True, False])
def test_single_hop_known_values(serial):
    # Source on a 20 ms grid flips at 95 -> visible in its state at 100.
    stages = [ChainStage(20), ChainStage(20, "step_end")]
    expected_relay = 100 if serial else 120
    oracle = replay_chain(95, stages, serial, horizon=400)
    assert oracle == [100, expected_relay]
    assert run_chain_through_scheduler(95, stages, serial, 400) == oracle


def test_mixed_grids_serial_snap():
    # 2419-style event: source 20 ms, end-reading relay 15 ms, hold relay 20 ms.
    stages = [ChainStage(20), ChainStage(15, "step_end"), ChainStage(20, "step_start")]
    oracle = replay_chain(2419, stages, True, horizon=2600)
    assert oracle[0] == 2420
    assert oracle[1] == 2430
    sched = run_chain_through_scheduler(2419, stages, True, 2600)
    assert sched == oracle


def test_random_chains_match_oracle():
    rng = random.Random(1730)
    for trial in range(60):
        n_relays = rng.randint(1, 3)
        stages = [ChainStage(rng.randrange(5, 51))]
        for _ in range(n_relays):
            stages.append(ChainStage(rng.randrange(5, 51),
                                     rng.choice(["step_start", "step_end"])))
        t_star = rng.randrange(40, 400)
        serial = rng.random() < 0.5
        horizon = t_star + sum(2 * s.step for s in stages) + 200
        oracle = replay_chain(t_star, stages, serial, horizon)
        sched = run_chain_through_scheduler(t_star, stages, serial, horizon)
        assert sched == oracle, (
            f"trial {trial}: t*={t_star} serial={serial} "
            f"stages={[(s.step, s.read_at) for s in stages]}: {sched} != {oracle}")
