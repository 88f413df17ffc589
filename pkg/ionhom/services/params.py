"""Default parameter set and validation against the standing assumptions"""
from typing import List, Optional, Tuple

import numpy as np
from loguru import logger

from ionhom.core.errors import ValidationFailedError
from ionhom.models.params import (
    ConcentrationBounds,
    InitialData,
    PhysicalParams,
    PumpParams,
    default_species,
)
from ionhom.models.reports import AssumptionCheck, ValidationReport
from ionhom.models.state import TaggedGrid

EN_RELATIVE_TOL = 1e-12
SAMPLE_RESOLUTION = 32

DEFAULT_C0_I = (10.0, 135.0, 145.0)
DEFAULT_C0_E = (140.0, 5.0, 145.0)


def default_params() -> Tuple[PhysicalParams, InitialData]:
    """
    Nondimensional O(1) defaults

    The numbers are arbitrary but valid: concentrations echo the usual
    K-rich intracellular / Na-rich extracellular asymmetry and satisfy
    electroneutrality in both compartments.
    """
    physics = PhysicalParams(
        species=default_species(),
        D=1.0,
        G=(1.0, 1.0, 1.0),
        P_m=1.0,
        pump=PumpParams(),
    )
    initial = InitialData(C0_I=DEFAULT_C0_I, C0_E=DEFAULT_C0_E, phi0=0.0)
    return physics, initial


def validate_params(
    params: PhysicalParams,
    init: InitialData,
    bounds: ConcentrationBounds,
    grid: Optional[TaggedGrid] = None,
) -> ValidationReport:
    """
    Check initial data against positivity, electroneutrality and the sigma floor

    Args:
        params: Physical parameters
        init: Initial data
        bounds: (C_d, C_u, C_l)
        grid: Grid to sample on; both compartments are sampled on a 32 x 32 grid when omitted

    Returns:
        ValidationReport with one check per assumption and compartment

    Raises:
        ValueError: if the initial data does not give one value per species
    """
    count = len(params.species)
    if len(init.C0_I) != count or len(init.C0_E) != count:
        raise ValueError(
            f"initial data needs {count} concentrations per compartment, "
            f"got {len(init.C0_I)} and {len(init.C0_E)}"
        )
    for patch in init.patches:
        if len(patch.values) != count:
            raise ValueError(f"concentration patch at ({patch.x:g}, {patch.y:g}) needs {count} values")

    z = params.valences
    checks: List[AssumptionCheck] = []
    for label, intracellular in (("I", True), ("E", False)):
        x, y = _sample_points(grid, intracellular)
        if x.size == 0:
            continue
        C = init.concentrations(np.full(x.shape, intracellular), x, y)
        checks += _compartment_checks(label, C, z, x, y, bounds)

    report = ValidationReport(checks=checks)
    if report.passed:
        logger.debug(f"Validation passed ({len(checks)} checks)")
    else:
        logger.warning(f"Validation failed: {[c.name for c in report.failures]}")
    return report


def require_valid(report: ValidationReport):
    """Raise if any assumption failed"""
    if not report.passed:
        names = ", ".join(c.name for c in report.failures)
        raise ValidationFailedError(f"initial data violates: {names}", report)


def _sample_points(grid: Optional[TaggedGrid], intracellular: bool) -> Tuple[np.ndarray, np.ndarray]:
    if grid is None:
        c = (np.arange(SAMPLE_RESOLUTION) + 0.5) / SAMPLE_RESOLUTION
        x, y = np.meshgrid(c, c, indexing="ij")
        return x.ravel(), y.ravel()
    x, y = grid.centers()
    mask = grid.intracellular if intracellular else ~grid.intracellular
    return x[mask], y[mask]


def _compartment_checks(
    label: str, C: np.ndarray, z: np.ndarray, x: np.ndarray, y: np.ndarray, bounds: ConcentrationBounds
) -> List[AssumptionCheck]:
    def at(k: int) -> Tuple[float, float]:
        return (float(x[k]), float(y[k]))

    checks = []

    c_min = C.min(axis=0)
    k = int(np.argmin(c_min))
    checks.append(AssumptionCheck(
        name=f"lower_bound_{label}",
        passed=bool(c_min[k] >= bounds.C_d),
        worst_value=float(c_min[k]),
        threshold=bounds.C_d,
        location=at(k),
        message=f"min concentration {c_min[k]:g} vs C_d={bounds.C_d:g}",
    ))

    c_max = C.max(axis=0)
    k = int(np.argmax(c_max))
    checks.append(AssumptionCheck(
        name=f"upper_bound_{label}",
        passed=bool(c_max[k] <= bounds.C_u),
        worst_value=float(c_max[k]),
        threshold=bounds.C_u,
        location=at(k),
        message=f"max concentration {c_max[k]:g} vs C_u={bounds.C_u:g}",
    ))

    charge = np.abs(np.tensordot(z, C, axes=1))
    scale = np.tensordot(np.abs(z), np.abs(C), axes=1)
    relative = charge / np.maximum(scale, np.finfo(float).tiny)
    k = int(np.argmax(relative))
    checks.append(AssumptionCheck(
        name=f"electroneutrality_{label}",
        passed=bool(relative[k] <= EN_RELATIVE_TOL),
        worst_value=float(charge[k]),
        threshold=EN_RELATIVE_TOL,
        location=at(k),
        message=f"|sum z_i C_i| = {charge[k]:.3e} (relative {relative[k]:.3e})",
    ))

    sigma = np.tensordot(z ** 2, C, axes=1)
    k = int(np.argmin(sigma))
    checks.append(AssumptionCheck(
        name=f"sigma_floor_{label}",
        passed=bool(sigma[k] >= bounds.C_l),
        worst_value=float(sigma[k]),
        threshold=bounds.C_l,
        location=at(k),
        message=f"min sigma {sigma[k]:g} vs C_l={bounds.C_l:g}",
    ))
    return checks
