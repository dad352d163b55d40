import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

from stormsim.experiments import cases  # noqa: E402


class RunCache:
    """Session-wide cache of study runs; several test modules share them."""

    def __init__(self) -> None:
        self._runs: dict = {}

    def scheduler(self, case_id: str):
        return self._get(("scheduler", case_id),
                         lambda: cases.run_test_case(cases.TEST_CASES[case_id]))

    def rti(self, case_id: str, lookahead_steps: int, compensate: bool = False):
        base = cases.TEST_CASES[case_id]
        tc = cases.TestCase(base.id, base.mode, base.plant_dt, base.controller_dt,
                            backend="rti", lookahead_steps=lookahead_steps,
                            compensate=compensate)
        return self._get(("rti", case_id, lookahead_steps, compensate),
                         lambda: cases.run_test_case(tc))

    def monolithic(self):
        return self._get(("monolithic",), cases.run_monolithic_reference)

    def _get(self, key, compute):
        if key not in self._runs:
            self._runs[key] = compute()
        return self._runs[key]


@pytest.fixture(scope="session")
def runs() -> RunCache:
    return RunCache()


@pytest.fixture(scope="session")
def params():
    return cases.default_params()
