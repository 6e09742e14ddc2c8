import numpy as np
import pytest

from irsopt.core import SystemDims
from irsopt.simulator import ScenarioConfig, generate_scenario

_ACCEPTANCE_LINES: list[str] = []


def record_acceptance(number: int, title: str, passed: bool, detail: str) -> None:
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {title} ({detail})"
    _ACCEPTANCE_LINES.append(line)
    print(line)


@pytest.fixture
def acceptance():
    return record_acceptance


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(20240617)


def crandn(rng, *shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)


@pytest.fixture(scope="session")
def small_dims():
    return SystemDims(32, 8, 16)


@pytest.fixture(scope="session")
def small_scenario(small_dims):
    return generate_scenario(ScenarioConfig(small_dims, num_users=4, seed=11))


@pytest.fixture(scope="session")
def full_dims():
    return SystemDims(500, 20, 4096)
