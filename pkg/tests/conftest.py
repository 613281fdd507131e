import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from stoclear import Bus, Instance, Participant, Scenario, ScenarioSet, load_embedded  # noqa: E402
from stoclear.model import GENERATOR, LOAD  # noqa: E402

STOCHASTIC = ("canonical", "mean_vector", "state_vector")
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def micro1():
    return load_embedded("micro1")


@pytest.fixture(scope="session")
def pzp6():
    return load_embedded("pzp6")


@pytest.fixture(scope="session")
def zkab6():
    return load_embedded("zkab6")


def one_bus(participants, scenarios, name="hand"):
    return Instance([Bus(1, "b1")], [], participants, ScenarioSet(tuple(scenarios)), name=name)


def gen(pid, c, dp, dm, lo, hi, rt_lo=None, rt_hi=None, stochastic=False, bus=1):
    return Participant(pid, GENERATOR, bus, c, dp, dm, lo, hi,
                       lo if rt_lo is None else rt_lo, hi if rt_hi is None else rt_hi, stochastic)


def load(pid, c, dp, dm, lo, hi=0.0, rt_lo=None, rt_hi=None, stochastic=False, bus=1):
    return Participant(pid, LOAD, bus, c, dp, dm, lo, hi,
                       lo if rt_lo is None else rt_lo, hi if rt_hi is None else rt_hi, stochastic)


@pytest.fixture
def flat_market():
    """Two scenarios with identical availability: real time repeats day-ahead."""
    parts = [gen("g1", 10, 1, 2, 0, 100), gen("g2", 20, 1, 1, 0, 50),
             load("d", 60, 2, 2, -70, stochastic=True, rt_lo=-100)]
    scen = [Scenario(0.3, {"d": 70}, "a"), Scenario(0.7, {"d": 70}, "b")]
    return one_bus(parts, scen, "flat")


@pytest.fixture
def single_scenario_market():
    parts = [gen("g1", 10, 1, 2, 0, 100), gen("g2", 20, 1, 1, 0, 50),
             load("d", 60, 2, 2, -90, stochastic=True, rt_lo=-100)]
    return one_bus(parts, [Scenario(1.0, {"d": 75}, "only")], "single")
