from pathlib import Path

import numpy as np
import pytest

from banditmtd.game import GameInstance

FIXTURES = Path(__file__).parent / "fixtures"


def two_config_instance(cost=0.1):
    """c0 = {v0, v1}, c1 = {v1, v2}; two types, type 1 only has v2."""
    s = np.array([[0.0, cost], [cost, 0.0]])
    return GameInstance.from_vuln_rewards(
        vuln_sets=[[0, 1], [1, 2]],
        capabilities=[[0, 1, 2], [2]],
        type_distribution=[0.5, 0.5],
        vuln_defender_reward=[-0.8, -0.4, -0.6],
        vuln_attacker_reward=[0.9, 0.5, 0.7],
        switching_cost=s,
    )


@pytest.fixture
def small_instance():
    return two_config_instance()


@pytest.fixture
def fixtures_dir():
    return FIXTURES


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(RESULTS):
        terminalreporter.write_line(RESULTS[n])
