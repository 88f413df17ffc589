"""
Membrane-local physics shared by the micro and macro solvers

Every function is vectorized: species-indexed arrays carry the species on
the first axis and any trailing shape (faces, macro cells) broadcasts.
Fluxes are returned without the epsilon prefactor; callers apply their own
surface measure.
"""
from typing import Union

import numpy as np
import pandas as pd
from loguru import logger
from scipy.optimize import root_scalar

from ionhom.core.errors import InvariantViolationError, MembraneDomainError
from ionhom.models.params import PhysicalParams, PumpParams
from ionhom.models.state import MembraneSample

ArrayLike = Union[float, np.ndarray]

# Na exported, K imported, Cl untouched
PUMP_STOICHIOMETRY = np.array([3.0, -2.0, 0.0])

RESTING_XTOL = 1e-12
RESTING_AGREEMENT = 1e-10


def nernst_potential(z: int, C_I: ArrayLike, C_E: ArrayLike) -> np.ndarray:
    """
    Nernst potential (1/z)(ln C_E - ln C_I)

    Raises:
        MembraneDomainError: on nonpositive concentration or z = 0
    """
    if z == 0:
        raise MembraneDomainError("valence must be nonzero")
    C_I = np.asarray(C_I, dtype=float)
    C_E = np.asarray(C_E, dtype=float)
    _check_positive(C_I, "intracellular")
    _check_positive(C_E, "extracellular")
    return (np.log(C_E) - np.log(C_I)) / z


def nernst_potentials(params: PhysicalParams, C_I: np.ndarray, C_E: np.ndarray) -> np.ndarray:
    """Nernst potentials of all species, shape (species, ...)"""
    C_I = np.asarray(C_I, dtype=float)
    C_E = np.asarray(C_E, dtype=float)
    _check_positive(C_I, "intracellular")
    _check_positive(C_E, "extracellular")
    z = _species_column(params.valences, C_I.ndim)
    return (np.log(C_E) - np.log(C_I)) / z


def channel_current(G: ArrayLike, v: ArrayLike, E: ArrayLike) -> np.ndarray:
    return np.asarray(G, dtype=float) * (np.asarray(v, dtype=float) - np.asarray(E, dtype=float))


def pump_current(pump: PumpParams, C_Na_I: ArrayLike, C_K_E: ArrayLike) -> np.ndarray:
    """Sum of the two Hill-type Na/K pump terms"""
    na = np.asarray(C_Na_I, dtype=float)
    k = np.asarray(C_K_E, dtype=float)
    first = pump.I_max1 * (na / (na + pump.K_Na1)) ** 3 * (k / (k + pump.K_K1)) ** 2
    second = pump.I_max2 * (na / (na + pump.K_Na2)) ** 3 * (k / (k + pump.K_K2)) ** 2
    return first + second


def pump_species_currents(I_p: ArrayLike) -> np.ndarray:
    """(3 I_p, -2 I_p, 0) stacked along a leading species axis"""
    I_p = np.asarray(I_p, dtype=float)
    return _species_column(PUMP_STOICHIOMETRY, I_p.ndim + 1) * I_p[None, ...]


def sample_pump(params: PhysicalParams, sample: MembraneSample) -> np.ndarray:
    """Pump current of a sample: Na-like inside, K-like outside"""
    return pump_current(params.pump, sample.C_I[0], sample.C_E[1])


def species_interface_flux(i: int, sample: MembraneSample, params: PhysicalParams) -> np.ndarray:
    """
    Epsilon-stripped normal flux z_i J_i.n of species i, n pointing from I to E

    Returns:
        G_i (v - E_i) + P_i + lambda_i P_m dv/dt
    """
    return species_interface_fluxes(sample, params)[i]


def species_interface_fluxes(sample: MembraneSample, params: PhysicalParams) -> np.ndarray:
    """All species at once, shape (species, ...)"""
    C_I = np.asarray(sample.C_I, dtype=float)
    E = nernst_potentials(params, C_I, sample.C_E)
    ndim = C_I.ndim
    v = np.asarray(sample.v, dtype=float)[None, ...]
    dvdt = np.asarray(sample.dvdt, dtype=float)[None, ...]
    G = _species_column(params.conductances, ndim)
    lam = _species_column(params.capacitor_weights, ndim)
    P = pump_species_currents(sample_pump(params, sample))
    return G * (v - E) + P + lam * params.P_m * dvdt


def total_membrane_current(sample: MembraneSample, params: PhysicalParams) -> np.ndarray:
    """sum_i G_i (v - E_i) + I_p + P_m dv/dt"""
    C_I = np.asarray(sample.C_I, dtype=float)
    E = nernst_potentials(params, C_I, sample.C_E)
    G = _species_column(params.conductances, C_I.ndim)
    v = np.asarray(sample.v, dtype=float)
    channel = (G * (v[None, ...] - E)).sum(axis=0)
    return channel + sample_pump(params, sample) + params.P_m * np.asarray(sample.dvdt, dtype=float)


def resting_potential(C_I: np.ndarray, C_E: np.ndarray, params: PhysicalParams) -> float:
    """
    Root of v -> sum_i G_i (v - E_i) + I_p

    The map is affine, so the closed form (sum G_i E_i - I_p) / sum G_i is
    returned after a bracketing bisection has agreed with it.

    Raises:
        MembraneDomainError: if every conductance is zero
    """
    C_I = np.asarray(C_I, dtype=float)
    C_E = np.asarray(C_E, dtype=float)
    G = params.conductances
    total_G = float(G.sum())
    if total_G <= 0.0:
        raise MembraneDomainError("resting potential needs at least one positive conductance")

    E = nernst_potentials(params, C_I, C_E)
    I_p = float(pump_current(params.pump, C_I[0], C_E[1]))
    closed = (float(G @ E) - I_p) / total_G

    def residual(v: float) -> float:
        return float(G @ (v - E)) + I_p

    half_width = 1.0 + abs(closed) + float(np.abs(E).max())
    result = root_scalar(
        residual, bracket=(closed - half_width, closed + half_width), method="bisect", xtol=RESTING_XTOL
    )
    if abs(result.root - closed) > RESTING_AGREEMENT:
        raise InvariantViolationError(
            "bisection and closed-form resting potentials disagree",
            {"bisection": result.root, "closed_form": closed},
        )
    return closed


def membrane_probe(params: PhysicalParams, C_I: np.ndarray, C_E: np.ndarray, v_grid: np.ndarray) -> pd.DataFrame:
    """
    Tabulate membrane currents over a grid of v at fixed trace concentrations

    Columns: v, E_<sp>, channel_<sp>, pump, flux_<sp>, total (dv/dt = 0)
    """
    C_I = np.asarray(C_I, dtype=float)
    C_E = np.asarray(C_E, dtype=float)
    v_grid = np.asarray(v_grid, dtype=float)
    names = params.names
    faces = v_grid.size

    sample = MembraneSample(
        v=v_grid,
        C_I=np.repeat(C_I[:, None], faces, axis=1),
        C_E=np.repeat(C_E[:, None], faces, axis=1),
        dvdt=np.zeros(faces),
    )
    E = nernst_potentials(params, sample.C_I, sample.C_E)
    channel = _species_column(params.conductances, 2) * (v_grid[None, :] - E)
    fluxes = species_interface_fluxes(sample, params)

    table = {"v": v_grid}
    for k, name in enumerate(names):
        table[f"E_{name}"] = E[k]
    for k, name in enumerate(names):
        table[f"channel_{name}"] = channel[k]
    table["pump"] = sample_pump(params, sample)
    for k, name in enumerate(names):
        table[f"flux_{name}"] = fluxes[k]
    table["total"] = total_membrane_current(sample, params)
    logger.debug(f"Membrane probe over {faces} potentials in [{v_grid.min():g}, {v_grid.max():g}]")
    return pd.DataFrame(table)


def _species_column(values: np.ndarray, ndim: int) -> np.ndarray:
    """Reshape a per-species vector to broadcast against (species, ...) arrays"""
    values = np.asarray(values, dtype=float)
    return values.reshape((-1,) + (1,) * max(ndim - 1, 0))


def _check_positive(C: np.ndarray, side: str):
    if np.any(~(C > 0.0)):
        bad = float(np.min(C)) if C.size else float("nan")
        logger.error(f"Nonpositive {side} concentration in membrane law: min={bad!r}")
        raise MembraneDomainError(
            f"{side} concentration must be positive for the logarithmic terms",
            {"side": side, "min": bad},
        )
