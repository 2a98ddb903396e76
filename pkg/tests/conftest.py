import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")

from cdyn.scenarios import build_bouncing_ball, build_pendulum  # noqa: E402

# pendulum used by the drift / reference / energy experiments
GAMMA = 9.81
ALPHA0 = 0.05


@pytest.fixture
def pendulum():
    return build_pendulum(GAMMA, ALPHA0)


@pytest.fixture
def unit_pendulum():
    return build_pendulum(1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def ball():
    return build_bouncing_ball(gamma=9.81, height=1.0)


# one PASS/FAIL line per acceptance criterion at the end of the run
_CRITERIA = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number = marker.args[0]
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        details = ", ".join(f"{k}={v}" for k, v in item.user_properties)
        _CRITERIA[number] = (report.outcome == "passed", item.name, details)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        ok, name, details = _CRITERIA[number]
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {name}"
        terminalreporter.write_line(line + (f"  [{details}]" if details else ""))
