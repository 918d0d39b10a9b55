import numpy as np
import pytest

from adam_pipe.synth import generate_samples, write_samples


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def synth64():
    return generate_samples(40, 64, seed=0)


@pytest.fixture
def synth_manifest(tmp_path):
    """Six 64x64 synthetic images with every annotation; returns the manifest path."""
    samples = generate_samples(6, 64, seed=3)
    return write_samples(samples, tmp_path / "data", "manifest.csv")


# --- acceptance bookkeeping -------------------------------------------------

ACCEPTANCE_LINES = {}


@pytest.fixture
def criterion():
    """``criterion(n, ok, detail)`` records a PASS/FAIL line, prints it, then asserts ``ok``."""

    def check(number, ok, detail):
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES[number] = line
        print(line)
        assert ok, line

    return check


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[number])
