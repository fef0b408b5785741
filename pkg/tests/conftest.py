import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from anongames.equilibrium import solve_se  # noqa: E402
from anongames.models import quality_ladder  # noqa: E402

BASELINE = dict(theta1=0.5, c_tilde=1.0, d=0.3, alpha=1.0, delta=0.2, beta=0.9, x_max=100)


@pytest.fixture(scope="session")
def baseline_model():
    return quality_ladder(**BASELINE)


@pytest.fixture(scope="session")
def baseline(baseline_model):
    return solve_se(baseline_model)


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import lines

    summary = lines()
    if summary:
        terminalreporter.section("acceptance criteria")
        for line in summary:
            terminalreporter.write_line(line)
