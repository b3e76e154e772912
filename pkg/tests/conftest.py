import numpy as np
import pytest

from collapsesim.core import Hamiltonian, SpatialGrid, cat_state, gaussian_packet


@pytest.fixture
def grid():
    return SpatialGrid(-8.0, 8.0, 64)


@pytest.fixture
def fine_grid():
    return SpatialGrid(-16.0, 16.0, 256)


@pytest.fixture
def wide_grid():
    return SpatialGrid(-12.0, 12.0, 96)


@pytest.fixture
def cat(grid):
    return cat_state(grid, 4.0, 0.5)


@pytest.fixture
def packet(grid):
    return gaussian_packet(grid, 0.0, 1.0)


@pytest.fixture
def H0():
    return Hamiltonian("zero")


def rng(seed=0):
    return np.random.default_rng(seed)
