import numpy as np
import pytest

from exitrate import BoundarySection, DomainSpec, MultiChannelSystem

ACCEPTANCE_LINES = []


def record(label, passed, detail):
    line = f"{label}: {'PASS' if passed else 'FAIL'} | {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def make_ex1(k1=-1.0, k2=-1.0):
    return MultiChannelSystem.build([[0.5]], [[[1.0]], [[1.0]]], [[[k1]], [[k2]]], [[1.0]])


def make_ex2():
    return MultiChannelSystem.build(np.diag([-1.0, -4.0]), [[[1.0], [0.0]]], [[[0.0, 0.0]]],
                                    np.eye(2))


@pytest.fixture
def ex1():
    return make_ex1()


@pytest.fixture
def ex2():
    return make_ex2()


@pytest.fixture
def interval():
    return DomainSpec.interval(-1.0, 1.0, sections=(BoundarySection.ball("right", [1.0]),
                                                    BoundarySection.ball("left", [-1.0])))


@pytest.fixture
def disk():
    return DomainSpec.ball([0.0, 0.0], 1.0,
                           sections=(BoundarySection.cap("east", [1.0, 0.0], 0.9),))
