import re

import numpy as np
import pytest

from spadsim.gate import GateProfile, PixelMaps
from spadsim.sensor import SensorConfig

_ACCEPTANCE = {}


def pytest_runtest_logreport(report):
    m = re.search(r"test_acceptance\.py::test_c(\d+)_(\w+)", report.nodeid)
    if not m:
        return
    key = int(m[1])
    if report.when == "call" or report.outcome != "passed":
        prev = _ACCEPTANCE.get(key, (None, "passed"))[1]
        outcome = "failed" if "failed" in (prev, report.outcome) else report.outcome
        _ACCEPTANCE[key] = (m[2].replace("_", " "), outcome)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_ACCEPTANCE):
        name, outcome = _ACCEPTANCE[key]
        mark = {"passed": "PASS", "failed": "FAIL"}.get(outcome, outcome.upper())
        terminalreporter.write_line(f"criterion {key:2d}: {mark}  {name}")


@pytest.fixture
def ideal_config():
    def make(width=8, height=8, **kw):
        return SensorConfig.ideal(width, height, **kw)

    return make


@pytest.fixture
def gate():
    return GateProfile.anchored()


@pytest.fixture
def zero_maps():
    return lambda w, h: PixelMaps.constant(w, h, 0.0, 3.8)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
