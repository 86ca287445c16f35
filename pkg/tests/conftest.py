import sys

import numpy as np
import pytest

from brease import TrialData, default_prior


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running statistical or quadrature checks")


@pytest.fixture
def prior():
    return default_prior()


@pytest.fixture
def small():
    return TrialData(2, 5, 3, 6)


def within_se(samples, target, k=3.0):
    """True when the sample mean is within k standard errors of target."""
    x = np.asarray(samples, dtype=float)
    se = x.std(ddof=1) / np.sqrt(x.size)
    return abs(x.mean() - target) <= k * se


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[2])):
            terminalreporter.write_line(line)
