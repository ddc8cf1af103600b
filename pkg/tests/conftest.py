import numpy as np
import pytest

from romift.hdm import DGDiscretization
from romift.problems import AdvectionReaction, NozzleFlow, advec_mesh, nozzle_mesh

# acceptance-criterion outcomes, filled by test_acceptance.py
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[k])


@pytest.fixture(scope="session")
def advec_small():
    """Advection-reaction on 2 x 4^2 quadratic triangles."""
    return DGDiscretization(advec_mesh(4), AdvectionReaction(), 2)


@pytest.fixture(scope="session")
def nozzle_small():
    """Nozzle with artificial viscosity on 12 quadratic elements."""
    return DGDiscretization(nozzle_mesh(12), NozzleFlow(av_scale=1.0), 2)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
