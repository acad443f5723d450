import os
import sys

import pytest

# add base path to sys
sys.path.append(os.path.join(os.path.dirname(__file__), ".."))

from inversion.experiments.examples import ExperimentSpec, build_problem  # noqa: E402
from inversion.models.time_integrator import GenAlphaConfig  # noqa: E402


@pytest.fixture
def coarse_spec():
    return ExperimentSpec("cont", h=0.5, dt=0.05)


@pytest.fixture
def coarse_problem(coarse_spec):
    return build_problem(coarse_spec)


@pytest.fixture
def tight_integrator():
    return GenAlphaConfig(newton_tol=1e-10)


@pytest.fixture
def default_problem(tight_integrator):
    return build_problem(ExperimentSpec("cont"), integrator=tight_integrator)
