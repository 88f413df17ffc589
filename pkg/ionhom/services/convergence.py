"""
Micro-to-macro convergence study

The macro model runs once on a grid every epsilon divides; each micro leg
is averaged per epsilon-cell and compared with the macro fields coarsened
to the same epsilon grid.
"""
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import reduce
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from loguru import logger
from pydantic import ValidationError

from ionhom.core.errors import IonHomError, ResolutionMismatchError
from ionhom.models.config import SimulationConfig
from ionhom.models.reports import ConvergenceReport
from ionhom.models.state import MacroFields, block_average
from ionhom.services.artifacts import RunDirectory, macro_fields_frame, micro_fields_frame, write_run_result
from ionhom.services.geometry import tile_domain, voxelize_unit_cell
from ionhom.services.macro import MacroSolver
from ionhom.services.micro import MicroSolver, average_fields


@dataclass
class LegOutcome:
    """Averaged snapshots and diagnostics of one micro leg, or why it failed"""
    epsilon_inv: int
    snapshots: Dict[int, MacroFields] = field(default_factory=dict)
    diagnostics: Optional[pd.DataFrame] = None
    error: Optional[Exception] = None


def macro_resolution(epsilon_invs: Sequence[int], requested: Optional[int] = None) -> int:
    """
    Smallest macro grid that every epsilon grid divides, or the requested one

    Raises:
        ResolutionMismatchError: if a requested resolution is not a common multiple
    """
    common = reduce(lambda a, b: a * b // math.gcd(a, b), epsilon_invs, 1)
    if requested is None:
        return common
    if requested % common != 0:
        raise ResolutionMismatchError(
            f"macro resolution {requested} is not a multiple of every 1/epsilon in {list(epsilon_invs)}",
            {"macro_resolution": requested, "epsilon_invs": list(epsilon_invs)},
        )
    return requested


def coarsen(fields: MacroFields, blocks: int) -> MacroFields:
    """Uniform block average of macro fields onto a blocks x blocks grid"""
    m = fields.m
    if m % blocks != 0:
        raise ResolutionMismatchError(f"macro grid {m} is not divisible by {blocks}", {"m": m, "blocks": blocks})
    if m == blocks:
        return fields
    weights = np.ones((m, m))

    def average(values: np.ndarray) -> np.ndarray:
        return block_average(values, weights, blocks)

    return MacroFields(
        t=fields.t,
        C_I=np.stack([average(c) for c in fields.C_I]),
        C_E=np.stack([average(c) for c in fields.C_E]),
        phi_I=average(fields.phi_I),
        phi_E=average(fields.phi_E),
        v=average(fields.v),
    )


def l2_error(approx: np.ndarray, reference: np.ndarray, scale: float) -> float:
    """
    Discrete L2 distance on the unit square, divided by scale when scale > 0

    Cells where either field is undefined (a block without that phase) are skipped.
    """
    valid = np.isfinite(approx) & np.isfinite(reference)
    if not valid.any():
        return float("nan")
    cell = 1.0 / approx.size
    error = float(np.sqrt(np.sum((approx[valid] - reference[valid]) ** 2) * cell))
    return error / scale if scale > 0.0 else error


def l2_norm(values: np.ndarray) -> float:
    valid = np.isfinite(values)
    return float(np.sqrt(np.sum(values[valid] ** 2) / values.size))


def run_micro_leg(
    config: SimulationConfig, epsilon_inv: int, steps: Sequence[int], directory: Optional[RunDirectory] = None
) -> LegOutcome:
    """
    One micro run at 1/epsilon = epsilon_inv, averaged at the requested steps

    Failures are captured in the outcome; the leg writes only into its own directory.
    """
    outcome = LegOutcome(epsilon_inv=epsilon_inv)
    run = config.run.for_epsilon(epsilon_inv)
    names = config.physics.names
    try:
        grid = tile_domain(config.geometry, epsilon_inv, run.n_per_cell)
        solver = MicroSolver(grid, config.physics, run, config.bounds)
        state = solver.initial_state(config.initial)
        result = solver.simulate(state, run.n_steps, snapshot_steps=steps)
        outcome.snapshots = {
            step: average_fields(grid, snapshot, epsilon_inv) for step, snapshot in result.snapshots.items()
        }
        outcome.diagnostics = result.diagnostics.to_frame()
        if directory is not None:
            write_run_result(directory, result, lambda s: micro_fields_frame(s, grid, names))
    except (IonHomError, ValueError, ValidationError) as e:
        logger.error(f"Micro leg epsilon=1/{epsilon_inv} failed: {e}")
        outcome.error = e
        if directory is not None:
            directory.write_error(e)
    if directory is not None:
        directory.write_manifest(config)
    return outcome


def run_convergence_study(
    config: SimulationConfig,
    epsilon_invs: Optional[Sequence[int]] = None,
    out: Optional[Path] = None,
    workers: int = 1,
) -> ConvergenceReport:
    """
    Compare epsilon-averaged micro solutions with the macro solution

    Args:
        config: Base configuration; the micro legs keep its per-cell resolution
        epsilon_invs: Denominators 1/epsilon, strictly increasing (default run.epsilons)
        out: Study directory; legs go to eps_<k>/ and the macro run to macro/
        workers: Concurrent micro legs

    Returns:
        ConvergenceReport with errors per field, snapshot and epsilon

    Raises:
        ResolutionMismatchError: if an epsilon or the per-cell resolution is not admissible
    """
    run = config.run
    epsilon_invs = list(epsilon_invs or run.epsilons)
    if not epsilon_invs:
        raise ValueError("at least one epsilon is required")
    if any(e < 1 for e in epsilon_invs):
        raise ResolutionMismatchError("1/epsilon must be a positive integer", {"epsilon_invs": epsilon_invs})
    # geometry must land on the per-cell grid before any leg starts
    voxelize_unit_cell(config.geometry, run.n_per_cell)

    names = config.physics.names
    steps = (0,) + run.snapshot_steps()
    fractions = [step / run.n_steps for step in steps[1:]]
    report = ConvergenceReport(epsilon_invs, fractions, MacroFields.field_names(names))
    root = RunDirectory(out) if out is not None else None

    m = macro_resolution(epsilon_invs, run.macro_resolution)
    logger.info(
        f"Convergence study: epsilon = 1/{epsilon_invs}, macro m={m}, "
        f"{run.n_per_cell} cells per epsilon-cell, snapshots at steps {list(steps[1:])}"
    )
    if run.cell_resolution != run.n_per_cell:
        logger.info(f"Cell problems use the legs' {run.n_per_cell} cells per side instead of {run.cell_resolution}")
    # the micro legs converge to the tensors of their own discrete unit cell
    macro_run = run.model_copy(update={"cell_resolution": run.n_per_cell})
    macro = MacroSolver(config.physics, config.geometry, macro_run, config.bounds, m=m)
    macro_result = macro.simulate(macro.initial_state(config.initial), run.n_steps, snapshot_steps=steps)
    if root is not None:
        macro_dir = RunDirectory(root.path / "macro")
        write_run_result(macro_dir, macro_result, lambda s: macro_fields_frame(s.fields(), names))
        macro_dir.write_manifest(config)
    macro_fields = {step: state.fields() for step, state in macro_result.snapshots.items()}

    def leg(epsilon_inv: int) -> LegOutcome:
        directory = RunDirectory(root.path / f"eps_{epsilon_inv}") if root is not None else None
        return run_micro_leg(config, epsilon_inv, steps, directory)

    if workers > 1 and len(epsilon_invs) > 1:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            outcomes = list(executor.map(leg, epsilon_invs))
    else:
        outcomes = [leg(e) for e in epsilon_invs]

    for outcome in outcomes:
        e = outcome.epsilon_inv
        if outcome.error is not None:
            report.mark_failed(e, f"{type(outcome.error).__name__}: {outcome.error}")
            continue
        report.diagnostics[e] = outcome.diagnostics
        report.add_errors(leg_errors(outcome, macro_fields, steps, run.n_steps, run.dt, names))

    for field_name in report.fields:
        ratios = report.ratios(field_name)
        if not ratios.empty:
            logger.info(f"{field_name}: error ratios {ratios.round(4).to_dict(orient='list')}")
    if report.failures:
        logger.warning(f"Failed legs: {sorted(report.failures)}")
    return report


def leg_errors(
    outcome: LegOutcome,
    macro_fields: Dict[int, MacroFields],
    steps: Sequence[int],
    n_steps: int,
    dt: float,
    names: Sequence[str],
) -> List[Dict[str, float]]:
    """
    Error rows of one leg at every snapshot after the initial one

    Errors are divided by the L2 norm of the macro field at t = 0 on the same
    grid, or left absolute when that norm is zero.
    """
    e = outcome.epsilon_inv
    m = next(iter(macro_fields.values())).m
    initial = coarsen(macro_fields[0], e).named(names)
    scales = {name: l2_norm(values) for name, values in initial.items()}
    rows = []
    for step in steps[1:]:
        micro = outcome.snapshots[step].named(names)
        macro = coarsen(macro_fields[step], e).named(names)
        for name in micro:
            rows.append({
                "epsilon_inv": e,
                "epsilon": 1.0 / e,
                "fraction": step / n_steps,
                "t": step * dt,
                "field": name,
                "error": l2_error(micro[name], macro[name], scales[name]),
            })
    logger.debug(f"Leg 1/{e}: {len(rows)} error entries against the m={m} macro run")
    return rows
