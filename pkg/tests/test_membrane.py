"""Tests for the membrane laws"""
import numpy as np
import pytest

from ionhom.core.errors import MembraneDomainError
from ionhom.models.params import PhysicalParams, default_species
from ionhom.models.state import MembraneSample
from ionhom.services.membrane import (
    membrane_probe,
    nernst_potential,
    nernst_potentials,
    pump_current,
    resting_potential,
    species_interface_flux,
    species_interface_fluxes,
    total_membrane_current,
)


@pytest.fixture
def samples(rng):
    """Fixture for random membrane samples in the admissible range"""
    faces = 1000
    return MembraneSample(
        v=rng.uniform(-3.0, 3.0, faces),
        C_I=rng.uniform(1.0, 200.0, (3, faces)),
        C_E=rng.uniform(1.0, 200.0, (3, faces)),
        dvdt=rng.uniform(-5.0, 5.0, faces),
    )


def test_nernst_potential():
    """Test the Nernst potential and its valence scaling"""
    assert nernst_potential(1, 10.0, 10.0) == 0.0
    assert nernst_potential(1, 10.0, 140.0) == pytest.approx(np.log(14.0))
    assert nernst_potential(-1, 10.0, 140.0) == pytest.approx(-np.log(14.0))
    assert nernst_potential(2, 10.0, 140.0) == pytest.approx(0.5 * np.log(14.0))


@pytest.mark.parametrize("C_I, C_E", [(0.0, 1.0), (1.0, -2.0), (float("nan"), 1.0)])
def test_nernst_domain(C_I, C_E):
    """Test that nonpositive concentrations are outside the membrane law's domain"""
    with pytest.raises(MembraneDomainError):
        nernst_potential(1, C_I, C_E)


def test_species_fluxes_sum_to_total_current(physics, samples):
    """Test that the species fluxes add up to the total membrane current"""
    fluxes = species_interface_fluxes(samples, physics)
    total = total_membrane_current(samples, physics)

    np.testing.assert_allclose(fluxes.sum(axis=0), total, rtol=1e-13, atol=1e-12)


def test_single_species_flux(physics, samples):
    """Test that the per-species accessor matches the stacked fluxes"""
    fluxes = species_interface_fluxes(samples, physics)
    for i in range(3):
        np.testing.assert_array_equal(species_interface_flux(i, samples, physics), fluxes[i])


def test_flux_vanishes_at_reversal(physics):
    """Test that a channel carries no current at its Nernst potential"""
    pumpless = physics.model_copy(update={"pump": physics.pump.switched_off()})
    C_I = np.array([10.0, 135.0, 145.0])
    C_E = np.array([140.0, 5.0, 145.0])
    E = nernst_potentials(pumpless, C_I, C_E)
    sample = MembraneSample(v=E[0], C_I=C_I, C_E=C_E, dvdt=0.0)

    assert species_interface_flux(0, sample, pumpless) == pytest.approx(0.0, abs=1e-14)


def test_pump_limits(physics):
    """Test the pump current at its limits"""
    assert pump_current(physics.pump, 0.0, 5.0) == 0.0
    assert pump_current(physics.pump.switched_off(), 10.0, 5.0) == 0.0
    # saturation: both Hill factors tend to one
    assert pump_current(physics.pump, 1e9, 1e9) == pytest.approx(1.0, rel=1e-6)

    na = np.linspace(0.1, 100.0, 50)
    values = pump_current(physics.pump, na, 5.0)
    assert np.all(np.diff(values) > 0.0)


def test_resting_potential(physics):
    """Test that the total current vanishes at the resting potential"""
    C_I = np.array([10.0, 135.0, 145.0])
    C_E = np.array([140.0, 5.0, 145.0])
    v = resting_potential(C_I, C_E, physics)

    E = nernst_potentials(physics, C_I, C_E)
    I_p = pump_current(physics.pump, C_I[0], C_E[1])
    assert v == pytest.approx((physics.conductances @ E - I_p) / physics.conductances.sum())
    sample = MembraneSample(v=np.asarray(v), C_I=C_I, C_E=C_E, dvdt=0.0)
    assert abs(total_membrane_current(sample, physics)) <= 1e-12


def test_resting_potential_needs_conductance():
    """Test that the resting potential is undefined without conductances"""
    params = PhysicalParams(species=default_species(), G=(0.0, 0.0, 0.0))
    with pytest.raises(MembraneDomainError):
        resting_potential(np.ones(3), np.ones(3), params)


def test_membrane_probe(physics):
    """Test the current table over a v-grid"""
    v_grid = np.linspace(-3.0, 3.0, 7)
    table = membrane_probe(physics, np.array([10.0, 135.0, 145.0]), np.array([140.0, 5.0, 145.0]), v_grid)

    assert len(table) == 7
    assert list(table.columns[:4]) == ["v", "E_Na", "E_K", "E_Cl"]
    flux_sum = table[["flux_Na", "flux_K", "flux_Cl"]].sum(axis=1)
    np.testing.assert_allclose(flux_sum, table["total"], rtol=1e-13, atol=1e-12)
    # the total current is increasing in v
    assert np.all(np.diff(table["total"]) > 0.0)
