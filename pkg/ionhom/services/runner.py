"""Single runs: micro, macro, cell problem, membrane probe and validation"""
from pathlib import Path
from typing import Optional

import numpy as np
from loguru import logger

from ionhom.models.config import RunMode, SimulationConfig
from ionhom.models.reports import ValidationReport
from ionhom.models.state import Subdomain
from ionhom.services.artifacts import (
    RunDirectory,
    interface_frame,
    macro_fields_frame,
    micro_fields_frame,
    write_run_result,
)
from ionhom.services.cell_problem import compute_tensor, tensor_frame
from ionhom.services.geometry import connected_components, tile_domain, voxelize_unit_cell
from ionhom.services.macro import MacroSolver
from ionhom.services.membrane import membrane_probe, resting_potential
from ionhom.services.micro import MicroSolver, average_fields
from ionhom.services.params import validate_params


def run_single(config: SimulationConfig, out: Path) -> RunDirectory:
    """
    Execute the run selected by run.mode and write its artifacts

    Args:
        config: Validated configuration
        out: Run directory

    Returns:
        The run directory, manifest written

    Raises:
        IonHomError: on any solver failure; the caller records it
    """
    directory = RunDirectory(out)
    directory.write_config(config)
    mode = config.run.mode
    if mode == RunMode.MICRO:
        run_micro(config, directory)
    elif mode == RunMode.MACRO:
        run_macro(config, directory)
    else:
        run_cell_problem(config, directory)
    directory.write_manifest(config)
    return directory


def run_micro(config: SimulationConfig, directory: RunDirectory):
    run = config.run
    names = config.physics.names
    grid = tile_domain(config.geometry, run.epsilon_inv, run.n_per_cell)
    directory.write_raster(grid.tag_raster(), "geometry.csv")

    solver = MicroSolver(grid, config.physics, run, config.bounds)
    state = solver.initial_state(config.initial)
    result = solver.simulate(state, snapshot_steps=run.snapshot_steps())
    write_run_result(directory, result, lambda s: micro_fields_frame(s, grid, names))
    directory.write_frame(interface_frame(result.final, grid), "interface_final.csv")
    averaged = average_fields(grid, result.final, run.epsilon_inv)
    directory.write_frame(macro_fields_frame(averaged, names), "averaged_final.csv")
    _log_summary(result)


def run_macro(config: SimulationConfig, directory: RunDirectory):
    names = config.physics.names
    solver = MacroSolver(config.physics, config.geometry, config.run, config.bounds)
    directory.write_frame(tensor_frame(solver.tensors), "tensors.csv")
    state = solver.initial_state(config.initial)
    result = solver.simulate(state, snapshot_steps=config.run.snapshot_steps())
    write_run_result(directory, result, lambda s: macro_fields_frame(s.fields(), names))
    _log_summary(result)


def run_cell_problem(config: SimulationConfig, directory: RunDirectory):
    """Tensors of both phases plus the tag and corrector rasters"""
    n = config.run.cell_resolution
    grid = voxelize_unit_cell(config.geometry, n)
    directory.write_raster(grid.tag_raster(), "geometry.csv")
    tensors = {}
    for subdomain in (Subdomain.I, Subdomain.E):
        if not grid.mask(subdomain).any():
            tensors[subdomain] = None
            continue
        tensors[subdomain] = compute_tensor(grid, subdomain, config.physics.D, config.run.linear_tol)
        correctors = tensors[subdomain].correctors
        count, _ = connected_components(grid, subdomain)
        logger.info(
            f"D_{subdomain.value}*: {count} component(s) in Y, {correctors[0].components} periodic, "
            f"symmetry error {tensors[subdomain].symmetry_error:.2e}"
        )
        for corrector in correctors:
            values = np.where(corrector.mask, corrector.values, 0.0)
            directory.write_raster(values, f"corrector_{subdomain.value}_{corrector.direction}.csv")
    directory.write_frame(tensor_frame(tensors), "tensors.csv")


def run_validation(config: SimulationConfig, directory: RunDirectory) -> ValidationReport:
    directory.write_config(config)
    report = validate_params(config.physics, config.initial, config.bounds)
    directory.write_frame(report.to_frame(), "validation.csv")
    directory.write_manifest(config)
    return report


def run_membrane(config: SimulationConfig, directory: RunDirectory, v_grid: Optional[np.ndarray] = None) -> float:
    """
    Resting potential at the initial base concentrations, and the current table over v_grid if given

    Returns:
        The resting potential of those concentrations
    """
    C_I = np.asarray(config.initial.C0_I, dtype=float)
    C_E = np.asarray(config.initial.C0_E, dtype=float)
    directory.write_config(config)
    if v_grid is not None:
        directory.write_frame(membrane_probe(config.physics, C_I, C_E, v_grid), "membrane_probe.csv")
    v_rest = resting_potential(C_I, C_E, config.physics)
    logger.info(f"Resting potential at the initial concentrations: {v_rest:.10g}")
    directory.write_manifest(config)
    return v_rest


def _log_summary(result):
    diagnostics = result.diagnostics
    conservation = result.conservation
    drift = max(
        float(np.abs(conservation[c]).max()) for c in conservation.columns if c.startswith("drift_")
    )
    logger.info(
        f"Max electroneutrality defect {diagnostics.column('en_drift').max():.3e}, "
        f"max relative total drift {drift:.3e}, "
        f"mean Picard sweeps {diagnostics.column('picard_iterations')[1:].mean() if len(diagnostics) > 1 else 0:.2f}"
    )
