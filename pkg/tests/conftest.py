"""Shared fixtures for the ionhom tests"""
import numpy as np
import pytest

from ionhom.models.config import RunConfig, SimulationConfig
from ionhom.models.geometry import UnitCellGeometry
from ionhom.models.params import ConcentrationBounds, InitialData
from ionhom.services.params import default_params

# equal concentrations on both sides make every Nernst potential vanish
EQUILIBRIUM_C = (100.0, 100.0, 200.0)


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running accuracy checks")


@pytest.fixture
def physics():
    """Fixture for the default physical parameters"""
    return default_params()[0]


@pytest.fixture
def initial():
    """Fixture for the default initial data"""
    return default_params()[1]


@pytest.fixture
def bounds():
    """Fixture for the default concentration bounds"""
    return ConcentrationBounds()


@pytest.fixture
def equilibrium():
    """Fixture for initial data with identical compartments"""
    return InitialData(C0_I=EQUILIBRIUM_C, C0_E=EQUILIBRIUM_C, phi0=0.0)


@pytest.fixture
def square():
    """Fixture for the centred square unit cell"""
    return UnitCellGeometry.centered_square(0.5)


@pytest.fixture
def short_run():
    """Fixture for a small micro run configuration"""
    return RunConfig(
        epsilon_inv=2,
        grid_resolution=16,
        dt=1e-3,
        T_end=5e-3,
        cell_resolution=16,
        snapshots=(0.4, 1.0),
    )


@pytest.fixture
def rng():
    """Fixture for a seeded random generator"""
    return np.random.default_rng(20240611)


@pytest.fixture
def small_flat():
    """Fixture for flat overrides that keep CLI runs short"""
    return {
        "run.epsilon": "0.5",
        "run.n_per_cell": "8",
        "run.dt": "0.001",
        "run.T_end": "0.004",
        "run.cell_resolution": "16",
        "run.snapshots": "0.5,1.0",
    }


@pytest.fixture
def small_config(small_flat):
    """Fixture for a validated small SimulationConfig"""
    return SimulationConfig.from_flat(small_flat)
