"""Shared fixtures: cheap nominal trajectories rebuilt from archived
converged decisions (propagation only, no boundary-value solving)."""
import json
import pathlib

import numpy as np
import pytest

from gcnet.problems import landing_problem, transfer_problem
from gcnet.trajectories import sample_optimal_trajectory

GOLDEN = pathlib.Path(__file__).parent / "golden"


def load_golden(name: str) -> dict:
    with open(GOLDEN / name) as fh:
        return json.load(fh)


@pytest.fixture(scope="session")
def transfer_golden():
    """Archived converged transfer decision (costates0, tof)."""
    return load_golden("transfer_nominal.json")


@pytest.fixture(scope="session")
def landing_golden():
    """Archived converged landing decision (costates0, tof, eps)."""
    return load_golden("landing_nominal.json")


@pytest.fixture(scope="session")
def landing_golden_decision(landing_golden):
    problem = landing_problem()
    return (problem, np.array(landing_golden["costates0"]),
            landing_golden["tof"], landing_golden["eps"])


@pytest.fixture(scope="session")
def transfer_nominal():
    """Nominal transfer rebuilt from the archived decision vector."""
    golden = load_golden("transfer_nominal.json")
    problem = transfer_problem()
    return sample_optimal_trajectory(
        problem, problem.x0, np.array(golden["costates0"]), golden["tof"])


@pytest.fixture(scope="session")
def landing_nominal():
    """Nominal landing at the final barrier weight, from the archived decision."""
    golden = load_golden("landing_nominal.json")
    problem = landing_problem()
    return sample_optimal_trajectory(
        problem, problem.x0, np.array(golden["costates0"]), golden["tof"],
        eps=golden["eps"])
