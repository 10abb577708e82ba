import sys

import numpy as np
import pytest

from crsum import FadingModel, PowerBudget, sample_bc_states, sample_mac_states


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """Echo the acceptance-criteria verdict lines after the test run."""
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None) if mod else None
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def small_mac_ensemble():
    """50-state K=2, M=1 ensemble shared by the cheaper tests."""
    model = FadingModel(K=2, M=1, n_states=50, seed=101)
    return sample_mac_states(model)


@pytest.fixture(scope="session")
def small_bc_ensemble():
    model = FadingModel(K=3, M=2, n_states=50, seed=102)
    return sample_bc_states(model)


@pytest.fixture(scope="session")
def unit_budget_2x1():
    return PowerBudget.symmetric(2, 1, 1.0, 0.8)


@pytest.fixture()
def rng():
    return np.random.Generator(np.random.Philox(key=424242))
