import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from convex_cmdp.mdp import TabularMdp  # noqa: E402
from oracles import random_mdp_arrays  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_mdp(rng, S=3, A=2, gamma=None):
    P, g, rho = random_mdp_arrays(rng, S, A, gamma)
    return TabularMdp(P, g, rho)


@pytest.fixture
def small_mdp(rng):
    return random_mdp(rng, 3, 2, 0.8)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is not None and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in mod.RESULTS:
            terminalreporter.write_line(line)
