"""Tests for the micro-to-macro convergence study"""
import json

import numpy as np
import pandas as pd
import pytest

from ionhom.core.errors import PicardDivergenceError, ResolutionMismatchError
from ionhom.models.config import SimulationConfig
from ionhom.models.reports import ConvergenceReport
from ionhom.models.state import MacroFields
from ionhom.services import convergence
from ionhom.services.artifacts import ERROR_RECORD, MANIFEST, RunDirectory, emit_plot_data, write_convergence
from ionhom.services.convergence import coarsen, l2_error, l2_norm, macro_resolution, run_convergence_study
from ionhom.services.diagnostics import AGGREGATE_COLUMNS, NORM_COLUMNS

REGIMES = {
    "square_con_discon": {"geometry.shape": "centered_square", "geometry.a": "0.5", "run.connectivity": "con_discon"},
    "cross_con_con": {"geometry.shape": "cross_channel", "geometry.w": "0.5", "run.connectivity": "con_con"},
}


@pytest.fixture
def frozen_flat(small_flat):
    """Fixture for a study whose micro and macro solutions are both constant"""
    return {
        **small_flat,
        "physics.G.Na": "0",
        "physics.G.K": "0",
        "physics.G.Cl": "0",
        "physics.P_m": "0",
        "pump.I_max1": "0",
        "pump.I_max2": "0",
    }


def uniform_fields(m: int, value: float) -> MacroFields:
    block = np.full((3, m, m), value)
    plane = np.full((m, m), value)
    return MacroFields(t=0.0, C_I=block, C_E=block.copy(), phi_I=plane, phi_E=plane.copy(), v=plane.copy())


def test_macro_resolution():
    """Test the common macro grid of an epsilon list"""
    assert macro_resolution([2, 4, 8]) == 8
    assert macro_resolution([2, 3]) == 6
    assert macro_resolution([2, 4], requested=12) == 12
    with pytest.raises(ResolutionMismatchError):
        macro_resolution([4], requested=6)


def test_coarsen():
    """Test block averaging of macro fields"""
    fields = uniform_fields(4, 1.0)
    v = np.arange(16, dtype=float).reshape(4, 4)
    fields = MacroFields(t=0.0, C_I=fields.C_I, C_E=fields.C_E, phi_I=fields.phi_I, phi_E=fields.phi_E, v=v)

    coarse = coarsen(fields, 2)
    np.testing.assert_allclose(coarse.v, [[2.5, 4.5], [10.5, 12.5]])
    assert coarse.m == 2
    assert coarsen(fields, 4) is fields
    with pytest.raises(ResolutionMismatchError):
        coarsen(fields, 3)


def test_l2_error():
    """Test the discrete L2 distance and its normalization"""
    a = np.ones((2, 2))
    b = np.zeros((2, 2))

    assert l2_error(a, b, 0.0) == pytest.approx(1.0)
    assert l2_error(a, b, 2.0) == pytest.approx(0.5)
    assert l2_norm(np.full((4, 4), 3.0)) == pytest.approx(3.0)
    # undefined blocks are skipped
    a[0, 0] = np.nan
    assert l2_error(a, b, 0.0) == pytest.approx(np.sqrt(0.75))


def test_frozen_study_has_no_error(frozen_flat, tmp_path):
    """Test that a study without membrane currents reports zero error"""
    config = SimulationConfig.from_flat(frozen_flat)
    report = run_convergence_study(config, [1, 2], out=tmp_path)

    assert report.succeeded == [1, 2]
    assert not report.errors.empty
    assert report.errors["error"].max() <= 1e-10, report.errors.sort_values("error").tail()
    assert set(report.errors["field"]) == set(MacroFields.field_names(config.physics.names))
    assert (tmp_path / "macro" / "diagnostics.csv").is_file()
    assert (tmp_path / "eps_2" / MANIFEST).is_file()


def test_failed_leg_is_recorded(small_config, tmp_path, monkeypatch):
    """Test that a failing leg is marked while the others complete"""
    tile = convergence.tile_domain

    def failing_tile(geometry, epsilon_inv, n_per_cell):
        if epsilon_inv == 2:
            raise PicardDivergenceError("forced failure", {"iterations": 0})
        return tile(geometry, epsilon_inv, n_per_cell)

    monkeypatch.setattr(convergence, "tile_domain", failing_tile)
    report = run_convergence_study(small_config, [1, 2], out=tmp_path)

    assert report.succeeded == [1]
    assert "PicardDivergenceError" in report.failures[2]
    record = json.loads((tmp_path / "eps_2" / ERROR_RECORD).read_text())
    assert record["error"] == "PicardDivergenceError"
    assert (tmp_path / "eps_1" / "diagnostics.csv").is_file()
    assert set(report.errors["epsilon_inv"]) == {1}


def test_macro_tensors_use_leg_resolution(small_config, monkeypatch):
    """Test that the study's cell problems run on the legs' per-cell grid"""
    seen = []
    solver_class = convergence.MacroSolver

    def recording_solver(params, geometry, run, bounds=None, **kwargs):
        seen.append(run.cell_resolution)
        return solver_class(params, geometry, run, bounds, **kwargs)

    monkeypatch.setattr(convergence, "MacroSolver", recording_solver)
    assert small_config.run.cell_resolution != small_config.run.n_per_cell
    run_convergence_study(small_config, [1, 2])

    assert seen == [small_config.run.n_per_cell]


def test_concurrent_legs_match_sequential(small_config):
    """Test that running legs concurrently gives the same errors"""
    sequential = run_convergence_study(small_config, [1, 2])
    concurrent = run_convergence_study(small_config, [1, 2], workers=2)

    pd.testing.assert_frame_equal(sequential.errors, concurrent.errors)


def test_study_is_deterministic(small_config, tmp_path):
    """Test that two runs of one configuration write identical tables"""
    for name in ("first", "second"):
        report = run_convergence_study(small_config, [1, 2], out=tmp_path / name)
        write_convergence(report, RunDirectory(tmp_path / name), small_config)

    for table in ("errors.csv", "error_v.csv", "norms.csv", MANIFEST):
        first = (tmp_path / "first" / table).read_bytes()
        second = (tmp_path / "second" / table).read_bytes()
        assert first == second, f"{table} differs between identical runs"


def test_epsilon_list_must_increase():
    """Test that the epsilon list is strictly decreasing in epsilon"""
    with pytest.raises(ValueError):
        ConvergenceReport([4, 2], [1.0], ["v"])


def test_plot_data(tmp_path):
    """Test the per-field tables with ratios against the previous epsilon"""
    report = ConvergenceReport([2, 4, 8], [1.0], ["v"])
    report.add_errors([
        {"epsilon_inv": e, "epsilon": 1.0 / e, "fraction": 1.0, "t": 0.5, "field": "v", "error": err}
        for e, err in ((2, 0.4), (4, 0.2), (8, 0.1))
    ])
    emit_plot_data(report, RunDirectory(tmp_path))

    table = pd.read_csv(tmp_path / "error_v.csv")
    assert table["epsilon_inv"].tolist() == [2, 4, 8]
    np.testing.assert_allclose(table["ratio_1"].iloc[1:], [0.5, 0.5])
    assert np.isnan(table["ratio_1"].iloc[0])
    assert report.is_monotone("v")
    # no diagnostics: header only
    norms = pd.read_csv(tmp_path / "norms.csv")
    assert norms.empty
    assert "epsilon_inv" in norms.columns


def test_single_epsilon_has_no_ratios():
    """Test that one epsilon gives an error but no ratio"""
    report = ConvergenceReport([4], [1.0], ["v"])
    report.add_errors([{"epsilon_inv": 4, "epsilon": 0.25, "fraction": 1.0, "t": 1.0, "field": "v", "error": 0.1}])

    assert report.ratios("v").empty
    assert len(report.table("v")) == 1


@pytest.fixture(scope="module", params=sorted(REGIMES))
def refinement_study(request, tmp_path_factory):
    """Fixture for a 1/2, 1/4, 1/8 study of one connectivity regime"""
    config = SimulationConfig.from_flat({
        **REGIMES[request.param],
        "run.n_per_cell": "16",
        "run.dt": "0.001",
        "run.T_end": "0.5",
        "run.cell_resolution": "16",
        # fine enough that the macro discretization error stays below the epsilon = 1/8 error
        "run.macro_resolution": "64",
        "init.perturbation": "5",
    })
    report = run_convergence_study(config, [2, 4, 8], out=tmp_path_factory.mktemp(request.param), workers=3)
    return config, report


@pytest.mark.slow
def test_errors_decrease_with_epsilon(refinement_study):
    """Test that every averaged micro field approaches the macro field as epsilon shrinks"""
    config, report = refinement_study

    assert report.succeeded == [2, 4, 8]
    for name in MacroFields.field_names(config.physics.names):
        assert report.is_monotone(name, floor=1e-10), f"{name} errors do not decrease:\n{report.table(name)}"


@pytest.mark.slow
def test_norms_stay_bounded_as_epsilon_shrinks(refinement_study):
    """Test that no norm or aggregate at epsilon = 1/8 exceeds three times its epsilon = 1/2 value"""
    _, report = refinement_study

    for column in NORM_COLUMNS + AGGREGATE_COLUMNS:
        coarse = float(report.diagnostics[2][column].max())
        fine = float(report.diagnostics[8][column].max())
        assert np.isfinite(fine), f"{column} is not finite at epsilon = 1/8"
        assert fine <= 3.0 * coarse, f"{column}: {fine:.4e} at 1/8 against {coarse:.4e} at 1/2"
    # the intermediate leg sits under the same bound
    for column in NORM_COLUMNS:
        assert report.diagnostics[4][column].max() <= 3.0 * report.diagnostics[2][column].max()
