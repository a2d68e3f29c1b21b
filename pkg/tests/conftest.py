import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from absplace.terrain import Building, RadioParams, Scenario, TerrainMap  # noqa: E402


@pytest.fixture
def radio():
    return RadioParams()


@pytest.fixture
def small_scenario():
    """Three GUs on a 1 km square with one 40 m building between two of them."""
    terrain = TerrainMap(1000.0, (Building(500.0, 500.0, 50.0, 50.0, 40.0),))
    gus = [(300.0, 500.0), (700.0, 500.0), (100.0, 900.0)]
    return Scenario(gus, [(650.0, 500.0)], terrain, RadioParams(), grid_k=4)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# acceptance results, filled by tests/test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
