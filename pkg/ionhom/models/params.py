"""Physical parameters, initial data and bounds"""
import math
from typing import List, Literal, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

SPECIES_COUNT = 3
ALLOWED_VALENCES = (-2, -1, 1, 2)
LAMBDA_SUM_TOL = 1e-14


class SpeciesSpec(BaseModel):
    """One ion species"""
    model_config = ConfigDict(frozen=True)

    name: str = Field(..., description="Species label, e.g. Na")
    valence: int = Field(..., description="Valence z_i")
    capacitor_weight: float = Field(..., description="Share lambda_i of the membrane capacitive current")

    @field_validator("valence")
    @classmethod
    def _check_valence(cls, value: int) -> int:
        if value not in ALLOWED_VALENCES:
            raise ValueError(f"valence must be one of {ALLOWED_VALENCES}, got {value}")
        return value


class PumpParams(BaseModel):
    """Na/K pump constants"""
    model_config = ConfigDict(frozen=True)

    I_max1: float = Field(0.5, ge=0.0, description="Maximum pump current density, first term")
    I_max2: float = Field(0.5, ge=0.0, description="Maximum pump current density, second term")
    K_Na1: float = Field(1.0, gt=0.0, description="Intracellular Na threshold, first term")
    K_Na2: float = Field(1.0, gt=0.0, description="Intracellular Na threshold, second term")
    K_K1: float = Field(1.0, gt=0.0, description="Extracellular K threshold, first term")
    K_K2: float = Field(1.0, gt=0.0, description="Extracellular K threshold, second term")

    def switched_off(self) -> "PumpParams":
        """Same thresholds with both maximum currents zeroed"""
        return self.model_copy(update={"I_max1": 0.0, "I_max2": 0.0})


class PhysicalParams(BaseModel):
    """Every model constant shared by the micro and macro solvers"""
    model_config = ConfigDict(frozen=True)

    species: Tuple[SpeciesSpec, ...] = Field(..., description="Na-like, K-like, Cl-like species in that order")
    D: float = Field(1.0, gt=0.0, description="Diffusion constant shared by all species")
    G: Tuple[float, ...] = Field(..., description="Membrane conductance per species")
    P_m: float = Field(1.0, ge=0.0, description="Membrane capacitance")
    pump: PumpParams = Field(default_factory=PumpParams)

    @model_validator(mode="after")
    def _check_species(self) -> "PhysicalParams":
        if len(self.species) != SPECIES_COUNT:
            raise ValueError(f"exactly {SPECIES_COUNT} species are required, got {len(self.species)}")
        if len(self.G) != len(self.species):
            raise ValueError("one conductance per species is required")
        if any(g < 0.0 for g in self.G):
            raise ValueError("conductances must be nonnegative")
        total = math.fsum(s.capacitor_weight for s in self.species)
        if abs(total - 1.0) > LAMBDA_SUM_TOL:
            raise ValueError(f"capacitor weights must sum to 1, got {total!r}")
        return self

    @property
    def valences(self) -> np.ndarray:
        return np.array([s.valence for s in self.species], dtype=float)

    @property
    def capacitor_weights(self) -> np.ndarray:
        return np.array([s.capacitor_weight for s in self.species], dtype=float)

    @property
    def conductances(self) -> np.ndarray:
        return np.array(self.G, dtype=float)

    @property
    def names(self) -> List[str]:
        return [s.name for s in self.species]


class ConcentrationBounds(BaseModel):
    """User-chosen bounds (C_d, C_u, C_l) that the solvers monitor"""
    model_config = ConfigDict(frozen=True)

    C_d: float = Field(1.0, gt=0.0, description="Lower concentration bound")
    C_u: float = Field(200.0, gt=0.0, description="Upper concentration bound")
    C_l: float = Field(1.0, gt=0.0, description="Lower bound on sigma = sum z_i^2 C_i")

    @model_validator(mode="after")
    def _check_order(self) -> "ConcentrationBounds":
        if self.C_d > self.C_u:
            raise ValueError("C_d must not exceed C_u")
        return self


class ConcentrationPatch(BaseModel):
    """
    Square patch of one compartment where the initial concentrations are replaced

    Points with |x - x0| <= radius and |y - y0| <= radius on the chosen side
    of the membrane take the given values instead of the base state.
    """
    model_config = ConfigDict(frozen=True)

    x: float = Field(..., ge=0.0, le=1.0, description="Patch centre, first coordinate")
    y: float = Field(..., ge=0.0, le=1.0, description="Patch centre, second coordinate")
    radius: float = Field(..., gt=0.0, description="Half-width of the patch")
    compartment: Literal["I", "E"] = Field(..., description="Side of the membrane the patch applies to")
    values: Tuple[float, ...] = Field(..., description="Concentration per species inside the patch")

    def covers(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        return (np.abs(np.asarray(x) - self.x) <= self.radius) & (np.abs(np.asarray(y) - self.y) <= self.radius)


class InitialData(BaseModel):
    """
    Initial concentrations and membrane potential jump

    Concentrations are per-compartment base values plus an optional smooth
    perturbation A*cos(pi x1)*cos(pi x2) added to the first and last species
    (Na-like and Cl-like), which leaves sum z_i C_i unchanged when their
    valences are +1 and -1.
    Patches then overwrite the result pointwise, so data that breaks an
    assumption at a single location can be expressed.
    """
    model_config = ConfigDict(frozen=True)

    C0_I: Tuple[float, ...] = Field(..., description="Intracellular base concentration per species")
    C0_E: Tuple[float, ...] = Field(..., description="Extracellular base concentration per species")
    phi0: float = Field(0.0, description="Initial membrane potential jump")
    perturbation: float = Field(0.0, description="Amplitude of the smooth Na/Cl perturbation")
    patches: Tuple[ConcentrationPatch, ...] = Field((), description="Local replacements of the concentrations")

    def concentrations(self, intracellular: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """
        Sample initial concentrations at points

        Args:
            intracellular: Boolean array, True where the point lies in the intracellular space
            x, y: Point coordinates (same shape as intracellular)

        Returns:
            Array of shape (species, *x.shape)
        """
        intracellular = np.asarray(intracellular, dtype=bool)
        base_in = np.asarray(self.C0_I, dtype=float)
        base_out = np.asarray(self.C0_E, dtype=float)
        shape = (len(base_in),) + np.shape(x)
        values = np.where(
            intracellular[None, ...],
            np.broadcast_to(base_in.reshape((-1,) + (1,) * np.ndim(x)), shape),
            np.broadcast_to(base_out.reshape((-1,) + (1,) * np.ndim(x)), shape),
        ).astype(float)
        if self.perturbation != 0.0:
            bump = self.perturbation * np.cos(np.pi * np.asarray(x)) * np.cos(np.pi * np.asarray(y))
            values[0] += bump
            values[-1] += bump
        for patch in self.patches:
            inside = patch.covers(x, y) & (intracellular if patch.compartment == "I" else ~intracellular)
            values[:, inside] = np.asarray(patch.values, dtype=float)[:, None]
        return values

    def membrane_jump(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Initial [[phi]] at points"""
        return np.full(np.shape(x), self.phi0, dtype=float)


def default_species() -> Tuple[SpeciesSpec, ...]:
    """Na+, K+, Cl- with equal capacitor weights"""
    third = 1.0 / 3.0
    return (
        SpeciesSpec(name="Na", valence=1, capacitor_weight=third),
        SpeciesSpec(name="K", valence=1, capacitor_weight=third),
        SpeciesSpec(name="Cl", valence=-1, capacitor_weight=third),
    )
