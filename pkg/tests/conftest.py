import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from ztorus import construction, profiles


@pytest.fixture(scope="session")
def ground_state():
    return profiles.solve_ground_state()


@pytest.fixture(scope="session")
def gm_grid():
    return profiles.RadialGrid(30.0, 6001)


@pytest.fixture(scope="session")
def ground30(gm_grid):
    return profiles.solve_ground_state(grid=gm_grid, tol=1e-8)


@pytest.fixture(scope="session")
def profile_family(ground30, gm_grid):
    targets = list(np.round(np.arange(0.02, 0.21, 0.02), 10))
    return profiles.continue_profiles(targets, ground=ground30, grid=gm_grid)


@pytest.fixture(scope="session")
def profile01(profile_family):
    return profiles.with_decay_cert(profile_family[0.1])


@pytest.fixture(scope="session")
def interp01(profile01):
    return construction.ProfileInterpolant(profile01)


@pytest.fixture(scope="session")
def profile008(profile_family):
    return profile_family[0.08]


@pytest.fixture(scope="session")
def interp008(profile008):
    return construction.ProfileInterpolant(profile008)
