"""Tests for the corrector problems and effective tensors"""
import numpy as np
import pytest

from ionhom.models.geometry import UnitCellGeometry
from ionhom.models.state import Subdomain
from ionhom.services.cell_problem import (
    CellProblem,
    compute_effective_tensors,
    compute_tensor,
    effective_tensor,
    periodic_faces,
    solve_corrector,
    stripe_tensor_analytic,
    tensor_frame,
)
from ionhom.services.geometry import voxelize_unit_cell


def test_empty_cell_tensor():
    """Test that an all-extracellular cell gives D times the identity"""
    tensors = compute_effective_tensors(UnitCellGeometry.empty(), 16, D=1.5)

    assert tensors[Subdomain.I] is None
    np.testing.assert_allclose(tensors[Subdomain.E].matrix, 1.5 * np.eye(2), atol=1e-12)
    assert tensors[Subdomain.E].measure == 1.0


def test_stripe_tensor():
    """Test that the stripe blocks transport across it and keeps its share along it"""
    theta = 0.5
    tensors = compute_effective_tensors(UnitCellGeometry.stripe(theta), 16, D=1.0)

    for subdomain in (Subdomain.E, Subdomain.I):
        expected = stripe_tensor_analytic(theta, 1.0, subdomain).matrix
        np.testing.assert_allclose(tensors[subdomain].matrix, expected, atol=1e-8)
        assert tensors[subdomain].eigenvalues.min() <= 1e-8


def test_stripe_analytic_shares():
    """Test the closed-form stripe tensor for an uneven split"""
    assert stripe_tensor_analytic(0.25, 2.0).matrix[1, 1] == pytest.approx(0.5)
    assert stripe_tensor_analytic(0.25, 2.0, Subdomain.I).matrix[1, 1] == pytest.approx(1.5)
    with pytest.raises(ValueError):
        stripe_tensor_analytic(1.0, 1.0)


def test_square_tensor_is_isotropic(square):
    """Test symmetry, isotropy and bounds of the square's extracellular tensor"""
    tensors = compute_effective_tensors(square, 32, D=1.0)
    tensor = tensors[Subdomain.E]

    assert tensor.symmetry_error <= 1e-10
    assert tensor.matrix[0, 0] == pytest.approx(tensor.matrix[1, 1], abs=1e-8)
    assert abs(tensor.matrix[0, 1]) <= 1e-8
    eigenvalues = tensor.eigenvalues
    assert eigenvalues.min() > 0.0
    # never more than the share of the phase
    assert eigenvalues.max() <= 0.75 + 1e-10, f"Eigenvalues {eigenvalues} exceed |Y_E|"


def test_disconnected_inclusion_has_zero_tensor(square):
    """Test that an isolated intracellular square does not conduct"""
    tensors = compute_effective_tensors(square, 16, D=1.0)

    np.testing.assert_allclose(tensors[Subdomain.I].matrix, np.zeros((2, 2)), atol=1e-8)


def test_corrector_zero_mean(square):
    """Test the corrector normalization and residual"""
    grid = voxelize_unit_cell(square, 16)
    problem = CellProblem(grid, Subdomain.E, D=1.0)
    corrector = problem.solve(0)

    assert abs(corrector.mean()) <= 1e-12
    assert corrector.residual <= 1e-10
    assert corrector.components == 1
    assert np.all(corrector.values[~corrector.mask] == 0.0)


def test_square_corrector_antisymmetry(square):
    """Test that chi^j is odd under the mirror y_j -> 1 - y_j and even under the other mirror"""
    grid = voxelize_unit_cell(square, 32)

    for direction in (0, 1):
        chi = solve_corrector(grid, Subdomain.E, direction, D=1.0).values
        mirrored = np.flip(chi, axis=direction)
        other = np.flip(chi, axis=1 - direction)

        assert np.abs(chi).max() > 0.05, f"Corrector {direction} is trivially small"
        np.testing.assert_allclose(mirrored, -chi, atol=1e-9)
        np.testing.assert_allclose(other, chi, atol=1e-9)


def test_tensor_from_separate_correctors(square):
    """Test that assembling the tensor from separately solved correctors matches compute_tensor"""
    grid = voxelize_unit_cell(square, 16)
    correctors = tuple(solve_corrector(grid, Subdomain.E, j, D=2.0) for j in (0, 1))
    tensor = effective_tensor(grid, Subdomain.E, correctors, D=2.0)
    reference = compute_tensor(grid, Subdomain.E, D=2.0)

    np.testing.assert_allclose(tensor.matrix, reference.matrix, atol=1e-10)
    assert tensor.measure == pytest.approx(0.75)
    assert len(reference.correctors) == 2


def test_periodic_faces_wrap():
    """Test that wrap-around faces are included on a fully periodic grid"""
    grid = voxelize_unit_cell(UnitCellGeometry.empty(), 8)
    lower, upper = periodic_faces(grid, Subdomain.E, 0)

    assert lower.size == 64
    assert (7 * 8, 0) in set(zip(lower.tolist(), upper.tolist()))


def test_empty_subdomain_rejected():
    """Test that a corrector problem needs cells"""
    grid = voxelize_unit_cell(UnitCellGeometry.empty(), 8)
    with pytest.raises(ValueError):
        CellProblem(grid, Subdomain.I, D=1.0)


def test_tensor_frame(square):
    """Test the tensor table layout"""
    frame = tensor_frame(compute_effective_tensors(square, 16, D=1.0))

    assert len(frame) == 8
    assert set(frame["subdomain"]) == {"I", "E"}
    assert frame.loc[frame["subdomain"] == "E", "positive_definite"].all()


@pytest.mark.slow
def test_square_tensor_grid_convergence(square):
    """Test that the tensor converges under grid refinement"""
    values = [compute_effective_tensors(square, n, D=1.0)[Subdomain.E].matrix[0, 0] for n in (32, 64, 128)]
    first = abs(values[1] - values[0])
    second = abs(values[2] - values[1])

    assert second <= 0.6 * first, f"Refinement differences {first:.3e} -> {second:.3e}"
