import numpy as np
import pytest


def random_pd(rng, m, shift=0.1):
    """Random nonsymmetric matrix whose symmetric part is positive definite."""
    A = rng.normal(size=(m, m))
    S = rng.normal(size=(m, m))
    M = A @ A.T / m + (S - S.T) + shift * np.eye(m)
    return M


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


ACCEPTANCE_LINES = []


@pytest.fixture
def report():
    """Record one pass/fail line per acceptance criterion."""
    def _report(name, ok, detail=""):
        line = f"{name}: {'PASS' if ok else 'FAIL'}  {detail}".rstrip()
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok
    return _report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
