"""Tests for parameter models and validation"""
import numpy as np
import pytest
from pydantic import ValidationError

from ionhom.core.errors import ValidationFailedError
from ionhom.models.params import (
    ConcentrationBounds,
    ConcentrationPatch,
    InitialData,
    PhysicalParams,
    SpeciesSpec,
    default_species,
)
from ionhom.services.params import require_valid, validate_params


def test_default_params_pass(physics, initial, bounds):
    """Test that the default parameter set satisfies every assumption"""
    report = validate_params(physics, initial, bounds)

    assert report.passed, f"Unexpected failures: {[c.name for c in report.failures]}"
    # four checks per compartment
    assert len(report.checks) == 8


def test_electroneutrality_violation(physics, bounds):
    """Test that a charged compartment is reported and rejected"""
    init = InitialData(C0_I=(10.0, 135.0, 100.0), C0_E=(140.0, 5.0, 145.0))
    report = validate_params(physics, init, bounds)

    failed = [c.name for c in report.failures]
    assert failed == ["electroneutrality_I"], f"Expected only electroneutrality_I to fail, got {failed}"
    with pytest.raises(ValidationFailedError) as info:
        require_valid(report)
    assert info.value.details["failed"] == ["electroneutrality_I"]


def test_lower_bound_violation(physics, initial):
    """Test that concentrations below C_d fail the lower bound"""
    report = validate_params(physics, initial, ConcentrationBounds(C_d=20.0))

    failed = {c.name for c in report.failures}
    assert "lower_bound_I" in failed
    assert "lower_bound_E" in failed
    worst = next(c for c in report.checks if c.name == "lower_bound_I")
    assert worst.worst_value == pytest.approx(10.0)


def test_perturbation_keeps_electroneutrality(physics, bounds):
    """Test that the smooth Na/Cl perturbation leaves sum z_i C_i unchanged"""
    init = InitialData(C0_I=(10.0, 135.0, 145.0), C0_E=(140.0, 5.0, 145.0), perturbation=5.0)
    report = validate_params(physics, init, bounds)
    assert report.passed

    x, y = np.meshgrid(np.linspace(0, 1, 9), np.linspace(0, 1, 9), indexing="ij")
    C = init.concentrations(np.zeros(x.shape, dtype=bool), x, y)
    charge = np.tensordot(physics.valences, C, axes=1)
    assert np.max(np.abs(charge)) <= 1e-12


def test_single_point_violation_is_located(physics, initial, bounds):
    """Test that a charged patch covering one sample point fails with its location"""
    patch = ConcentrationPatch(x=0.3, y=0.7, radius=0.02, compartment="I", values=(10.0, 135.0, 100.0))
    init = initial.model_copy(update={"patches": (patch,)})
    report = validate_params(physics, init, bounds)

    failed = [c.name for c in report.failures]
    assert failed == ["electroneutrality_I"], f"Expected only electroneutrality_I to fail, got {failed}"
    check = report.failures[0]
    # the only 32 x 32 sample centre inside the patch
    assert check.location == pytest.approx((9.5 / 32, 22.5 / 32))
    assert check.worst_value == pytest.approx(45.0)

    x, y = np.meshgrid((np.arange(32) + 0.5) / 32, (np.arange(32) + 0.5) / 32, indexing="ij")
    C = init.concentrations(np.ones(x.shape, dtype=bool), x, y)
    charge = np.abs(np.tensordot(physics.valences, C, axes=1))
    assert np.count_nonzero(charge > 1e-9) == 1


def test_patch_leaves_other_compartment(physics, initial, bounds):
    """Test that an intracellular patch does not touch extracellular points"""
    patch = ConcentrationPatch(x=0.5, y=0.5, radius=0.2, compartment="I", values=(10.0, 135.0, 100.0))
    init = initial.model_copy(update={"patches": (patch,)})
    x, y = np.meshgrid(np.linspace(0.4, 0.6, 5), np.linspace(0.4, 0.6, 5), indexing="ij")

    C_E = init.concentrations(np.zeros(x.shape, dtype=bool), x, y)
    np.testing.assert_allclose(C_E[:, 2, 2], initial.C0_E)
    C_I = init.concentrations(np.ones(x.shape, dtype=bool), x, y)
    np.testing.assert_allclose(C_I[:, 2, 2], patch.values)


def test_patch_value_count(physics, initial, bounds):
    """Test that a patch with the wrong number of values is rejected"""
    patch = ConcentrationPatch(x=0.5, y=0.5, radius=0.1, compartment="E", values=(1.0, 2.0))
    with pytest.raises(ValueError, match="needs 3 values"):
        validate_params(physics, initial.model_copy(update={"patches": (patch,)}), bounds)


def test_capacitor_weights_must_sum_to_one():
    """Test that capacitor weights not summing to one are rejected"""
    species = (
        SpeciesSpec(name="Na", valence=1, capacitor_weight=0.5),
        SpeciesSpec(name="K", valence=1, capacitor_weight=0.3),
        SpeciesSpec(name="Cl", valence=-1, capacitor_weight=0.3),
    )
    with pytest.raises(ValidationError):
        PhysicalParams(species=species, G=(1.0, 1.0, 1.0))


def test_invalid_valence():
    """Test that a zero valence is rejected"""
    with pytest.raises(ValidationError):
        SpeciesSpec(name="X", valence=0, capacitor_weight=1.0)


def test_negative_conductance():
    """Test that negative conductances are rejected"""
    with pytest.raises(ValidationError):
        PhysicalParams(species=default_species(), G=(1.0, -1.0, 1.0))


def test_species_count_mismatch(physics, bounds):
    """Test that initial data with the wrong number of species is rejected"""
    init = InitialData(C0_I=(10.0, 135.0), C0_E=(140.0, 5.0))
    with pytest.raises(ValueError, match="3 concentrations"):
        validate_params(physics, init, bounds)


def test_bounds_order():
    """Test that C_d above C_u is rejected"""
    with pytest.raises(ValidationError):
        ConcentrationBounds(C_d=10.0, C_u=5.0)


def test_pump_switched_off(physics):
    """Test that switching the pump off zeroes only the maximum currents"""
    pump = physics.pump.switched_off()

    assert pump.I_max1 == 0.0 and pump.I_max2 == 0.0
    assert pump.K_Na1 == physics.pump.K_Na1
