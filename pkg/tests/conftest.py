import os
import sys

import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

from iivw.simulate import DgmConfig, simulate_dataset  # noqa: E402

settings.register_profile("default", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(scope="session")
def sim_small():
    """200 subjects, visit model depending on both treatment and mediator."""
    return simulate_dataset(DgmConfig(n_subjects=200).with_gamma(0.2, -0.2), 0)


@pytest.fixture(scope="session")
def sim_null():
    """Full-size cohort with a visit process independent of treatment and mediator."""
    return simulate_dataset(DgmConfig(), 0)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
