"""Shared fixtures for the lattice toolkit tests."""

import numpy as np
import pytest

from wlde.growth import GrowthParams
from wlde.kernels import KernelFamily, KernelSpec, discretize
from wlde.lattice import LatticeConfig, Trajectory


@pytest.fixture
def params():
    """s_f=0.3, s_h=0.7: Allee threshold 3/7."""
    return GrowthParams(s_f=0.3, s_h=0.7)


@pytest.fixture
def lattice():
    return LatticeConfig(dimension=1, extent=64)


@pytest.fixture
def gaussian_kernel():
    return discretize(KernelSpec(family=KernelFamily.GAUSSIAN, scale=1.0), 1, grid_size=64)


@pytest.fixture
def make_trajectory():
    """Wrap a (generations, sites) array as a dense 1D trajectory."""
    def build(values, spacing=1.0):
        values = np.asarray(values, dtype=float)
        config = LatticeConfig(dimension=1, extent=values.shape[1], spacing=spacing)
        return Trajectory(values=values, generations=np.arange(values.shape[0]), config=config)

    return build
