import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from rdlab.fields import BoxDomain
from rdlab.nonlinearity import builtin_family

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def line():
    return BoxDomain.interval(np.pi, 63)


@pytest.fixture(scope="session")
def square():
    return BoxDomain.box((1.0, 1.0), (15, 15))


@pytest.fixture(scope="session")
def cubic2():
    return builtin_family("cubic_chafee_infante", [2.0])


# -- acceptance summary ----------------------------------------------------------

_CRITERIA = []


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion number")


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.failed):
        return
    number = dict(report.user_properties).get("criterion")
    if number is not None:
        props = dict(report.user_properties)
        _CRITERIA.append((number, props.get("title", ""), report.passed,
                          props.get("detail", "")))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, passed, detail in sorted(_CRITERIA):
        verdict = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"criterion {number:2d} {verdict}  {title}: {detail}")
