import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from parabolica.coeffs.examples import ex1, ex2, heat_spec
from parabolica.mesh import build_grid
from parabolica.sampling import SamplePlan

settings.register_profile("default", max_examples=30, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

CONFIG_DIR = os.path.join(os.path.dirname(__file__), "..", "src", "parabolica", "configs")
MUTATED_DIR = os.path.join(os.path.dirname(__file__), "configs")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def spec1():
    return ex1()


@pytest.fixture(scope="session")
def spec2():
    return ex2(c=3.0)


@pytest.fixture(scope="session")
def heat1():
    return heat_spec()


@pytest.fixture(scope="session")
def small_plan():
    return SamplePlan(box=4.0, spacing=0.5, n_times=1, refine=False)


@pytest.fixture(scope="session")
def grid2():
    return build_grid(2, 3.0, 0.25)


def bump(X, width=1.0):
    """``cos^4`` bump of radius ``width``, C^2 with compact support."""
    r = np.linalg.norm(np.atleast_2d(X), axis=1) / width
    return np.where(r < 1, np.cos(0.5 * np.pi * r) ** 4, 0.0)
