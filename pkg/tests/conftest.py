import numpy as np
import pytest

from streamtse.config import ModelConfig
from streamtse.model import Models

# criterion number -> (passed, description); filled by test_acceptance.py
ACCEPTANCE_RESULTS: dict[int, tuple[bool, str]] = {}


@pytest.fixture(scope="session")
def models():
    return Models.create(ModelConfig(), seed=0)


@pytest.fixture(scope="session")
def micro_models():
    return Models.create(ModelConfig.micro(), seed=0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_RESULTS):
        ok, desc = ACCEPTANCE_RESULTS[n]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  criterion {n:2d}: {desc}")
