import numpy as np
import pytest

from ssdmgf.optimizer import brute_force_small, make_instance, solve
from ssdmgf.topology import Grid, replica_feeder
from ssdmgf.toys import toy_suite


@pytest.fixture(scope="session")
def replica():
    return replica_feeder()


@pytest.fixture(scope="session")
def replica_grid(replica):
    return Grid.from_feeder(replica)


@pytest.fixture(scope="session")
def toys():
    """Randomized small instances: at most 4 blocks and 5 steps."""
    return toy_suite(24, seed=42, max_blocks=4, max_steps=5)


@pytest.fixture(scope="session")
def solved_toys(toys):
    """(instance, solve plan, solve stats, brute-force plan) per toy."""
    out = []
    for feeder, scenario in toys:
        inst = make_instance(feeder, scenario)
        plan, stats = solve(inst)
        out.append((inst, plan, stats, brute_force_small(inst)))
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def pytest_terminal_summary(terminalreporter):
    """One PASS/FAIL line per acceptance criterion."""
    reports = [
        r for key in ("passed", "failed") for r in terminalreporter.stats.get(key, [])
        if r.when == "call" and "test_acceptance.py::test_ac" in r.nodeid
    ]
    if not reports:
        return
    terminalreporter.section("acceptance criteria")
    for r in sorted(reports, key=lambda r: r.nodeid):
        name = r.nodeid.split("::")[-1][len("test_"):]
        detail = dict(r.user_properties).get("acceptance", "")
        terminalreporter.write_line(f"{'PASS' if r.passed else 'FAIL'} {name}: {detail} ({r.duration:.1f}s)")
