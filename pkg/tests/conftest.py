import numpy as np
import pytest

from sparsedp.noise import NoiseSpec
from sparsedp.table import ExperimentProfile, synth_table

ACCEPTANCE_LINES = []


def record_criterion(number: int, passed: bool, detail: str) -> None:
    line = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_table():
    """m=4096 with 128 nonzeros, the equivalence-test domain."""
    return synth_table(ExperimentProfile(m=4096, rho=128 / 4096, seed=3))


@pytest.fixture(scope="session")
def spec_half():
    return NoiseSpec(0.5)
