import numpy as np
import pytest

from knudsen_layer.collision import GasState, VelocityGrid, assemble_kernel

ACCEPTANCE_LINES: list[str] = []


def record(line: str) -> None:
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def gas():
    return GasState()


@pytest.fixture(scope="session")
def op24(gas):
    return assemble_kernel(gas, VelocityGrid.uniform(24, 8.0))


@pytest.fixture(scope="session")
def op32(gas):
    return assemble_kernel(gas, VelocityGrid.uniform(32, 8.0))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
