import re

import numpy as np
import pytest

from taperpinn.network import init_params
from taperpinn.numcore import SeededRng


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False,
                     help="run the full-scale training runs")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: full-scale runs, hours of CPU time")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


@pytest.fixture
def tiny_params():
    return init_params(SeededRng(3), (2, 8, 8, 2), alpha0=1.0)


@pytest.fixture
def rng():
    return SeededRng(11)


def random_points(seed, n, b=2.0):
    g = np.random.default_rng(seed)
    return g.uniform(-b, b, n), g.uniform(0.0, 1.0, n)


ACCEPTANCE_LINES = []


@pytest.fixture
def criterion():
    """Record one PASS/FAIL line for an acceptance criterion."""
    def record(number, passed, text):
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'} -- {text}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    lines = list(ACCEPTANCE_LINES)
    for rep in terminalreporter.stats.get("skipped", []):
        match = re.search(r"test_acceptance\.py::test_(\d+)_", rep.nodeid)
        if match:
            reason = rep.longrepr[2] if isinstance(rep.longrepr, tuple) else "skipped"
            lines.append(f"criterion {match.group(1)}: SKIPPED -- {reason}")
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda t: int(t.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
