import numpy as np
import pytest

from hitparam.coefficients import build_model


def within(summary, truth, k=3.0):
    """|mean - truth| <= k * stderr, with a floor for exact answers."""
    return abs(summary.mean - truth) <= k * summary.std_error + 1e-12


@pytest.fixture
def bm():
    return build_model("ConstantBM", {"drift": 0.0, "sigma": 1.0}, barrier=1.0)


@pytest.fixture
def drifted_bm():
    return build_model("ConstantBM", {"drift": 0.5, "sigma": 1.0}, barrier=1.0)


@pytest.fixture
def tanh_model():
    return build_model("TanhDiffusion", {"amplitude": 0.5, "drift": 0.3}, barrier=1.0)


@pytest.fixture
def step_model():
    return build_model("StepDrift", {"level": 0.5, "jump_at": 0.2, "sigma": 1.0}, barrier=1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


ACCEPTANCE_LINES = {}


@pytest.fixture
def acceptance():
    """Record one PASS/FAIL line for an acceptance criterion."""

    def record(number, ok, detail):
        ACCEPTANCE_LINES[number] = f"{'PASS' if ok else 'FAIL'} criterion {number:2d}: {detail}"
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[number])
