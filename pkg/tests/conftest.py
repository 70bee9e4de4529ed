import pytest

from affinityq.model import SizeModel, two_type

# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE = {}


@pytest.fixture
def exp10():
    return SizeModel.exponential(10.0)


@pytest.fixture
def base():
    """Two symmetric types, five servers per pool, exponential sizes of mean 10."""
    return two_type(0.1)


def size_model(family, correlation="identical", mean=10.0, index=None):
    if family == "exponential":
        return SizeModel.exponential(mean, correlation)
    if family == "deterministic":
        return SizeModel.deterministic(mean, correlation)
    if family != "pareto":
        raise ValueError(f"unknown family {family!r}")
    if index is not None:
        return SizeModel.pareto(index=index, correlation=correlation)
    return SizeModel.pareto(mean=mean, correlation=correlation)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
