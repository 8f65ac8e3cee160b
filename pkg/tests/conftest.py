import numpy as np
import pytest

from darklind.effective import dark_space
from darklind.protocols import linear_path, spin32_protocol


@pytest.fixture(scope="session")
def spin32_linear():
    """The single-winding spin-3/2 protocol at gammaT = 200."""
    return spin32_protocol(linear_path(1, 0), 200.0)


@pytest.fixture(scope="session")
def spin32_ds(spin32_linear):
    return dark_space(spin32_linear.L_rot)


@pytest.fixture()
def rng():
    return np.random.default_rng(20260809)
