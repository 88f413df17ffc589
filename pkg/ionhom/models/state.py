"""Grids, fields and solver states"""
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Dict, Tuple

import numpy as np


class Subdomain(str, Enum):
    I = "I"
    E = "E"


@dataclass(frozen=True)
class InterfaceFaces:
    """
    Grid faces separating an intracellular cell from an extracellular one

    inner/outer are flat indices of the I-cell and the E-cell, axis is the
    face normal direction (0 for x1, 1 for x2) and sign is +1 when the
    I-to-E normal points towards increasing index along that axis.
    """
    inner: np.ndarray
    outer: np.ndarray
    axis: np.ndarray
    sign: np.ndarray

    @property
    def count(self) -> int:
        return int(self.inner.size)


@dataclass(frozen=True)
class TaggedGrid:
    """
    Square n x n cell-centred grid of (0,1)^2 with I/E tags

    Cells are indexed [ix, iy]; flat index is ix*n + iy and the centre of
    cell (ix, iy) is ((ix+0.5)h, (iy+0.5)h).
    """
    n: int
    intracellular: np.ndarray
    faces: InterfaceFaces
    epsilon_inv: int = 1
    n_per_cell: int = 0

    @property
    def h(self) -> float:
        return 1.0 / self.n

    @property
    def cell_count(self) -> int:
        return self.n * self.n

    @property
    def mask_I(self) -> np.ndarray:
        """Flat boolean mask of intracellular cells"""
        return self.intracellular.ravel()

    @property
    def mask_E(self) -> np.ndarray:
        return ~self.intracellular.ravel()

    @property
    def area_I(self) -> float:
        return int(self.intracellular.sum()) / self.cell_count

    @property
    def area_E(self) -> float:
        return (self.cell_count - int(self.intracellular.sum())) / self.cell_count

    @property
    def gamma(self) -> float:
        """Total interface length, face count times face length"""
        return self.faces.count * self.h

    def mask(self, subdomain: Subdomain) -> np.ndarray:
        return self.mask_I if Subdomain(subdomain) == Subdomain.I else self.mask_E

    def area(self, subdomain: Subdomain) -> float:
        return self.area_I if Subdomain(subdomain) == Subdomain.I else self.area_E

    def centers(self) -> Tuple[np.ndarray, np.ndarray]:
        """Cell-centre coordinates as two (n, n) arrays"""
        c = (np.arange(self.n) + 0.5) * self.h
        return np.meshgrid(c, c, indexing="ij")

    def tag_raster(self) -> np.ndarray:
        """1 for intracellular, 0 for extracellular"""
        return self.intracellular.astype(np.int8)


@dataclass(frozen=True)
class MembraneSample:
    """Membrane jump, trace concentrations (species first) and dv/dt"""
    v: np.ndarray
    C_I: np.ndarray
    C_E: np.ndarray
    dvdt: np.ndarray = 0.0


@dataclass(frozen=True)
class CorrectorField:
    """Periodic corrector chi^j on the s-cells of a unit-cell grid"""
    subdomain: Subdomain
    direction: int
    values: np.ndarray
    mask: np.ndarray
    components: int = 1
    residual: float = 0.0

    def mean(self) -> float:
        """Integral of chi over Y_s"""
        n = self.values.shape[0]
        return float(self.values[self.mask].sum()) / (n * n)


@dataclass(frozen=True)
class EffectiveTensor:
    """Homogenized diffusion matrix of one subdomain"""
    subdomain: Subdomain
    matrix: np.ndarray
    measure: float
    correctors: Tuple[CorrectorField, ...] = ()

    @property
    def symmetry_error(self) -> float:
        norm = np.linalg.norm(self.matrix)
        if norm == 0.0:
            return 0.0
        return float(np.linalg.norm(self.matrix - self.matrix.T) / norm)

    @property
    def eigenvalues(self) -> np.ndarray:
        sym = 0.5 * (self.matrix + self.matrix.T)
        return np.linalg.eigvalsh(sym)

    def is_positive_definite(self, tol: float = 1e-12) -> bool:
        return bool(self.eigenvalues.min() > tol)


@dataclass
class MicroState:
    """
    Microscale fields at one time level

    C has shape (species, cells): every cell stores its own subdomain's
    concentrations. v lives on interface faces, in the order of grid.faces.
    """
    t: float
    step: int
    C: np.ndarray
    phi: np.ndarray
    v: np.ndarray
    picard_iterations: int = 0

    def copy(self) -> "MicroState":
        return replace(self, C=self.C.copy(), phi=self.phi.copy(), v=self.v.copy())


@dataclass
class MacroState:
    """Macroscale fields on an m x m grid, species first"""
    t: float
    step: int
    C_I: np.ndarray
    C_E: np.ndarray
    phi_I: np.ndarray
    phi_E: np.ndarray
    v: np.ndarray
    area_I: float
    area_E: float
    gamma: float
    picard_iterations: int = 0

    def copy(self) -> "MacroState":
        return replace(
            self,
            C_I=self.C_I.copy(),
            C_E=self.C_E.copy(),
            phi_I=self.phi_I.copy(),
            phi_E=self.phi_E.copy(),
            v=self.v.copy(),
        )

    def fields(self) -> "MacroFields":
        return MacroFields(
            t=self.t,
            C_I=self.C_I.copy(),
            C_E=self.C_E.copy(),
            phi_I=self.phi_I.copy(),
            phi_E=self.phi_E.copy(),
            v=self.v.copy(),
        )


@dataclass(frozen=True)
class MacroFields:
    """Fields on the macro grid, either from a macro run or from averaging a micro state"""
    t: float
    C_I: np.ndarray
    C_E: np.ndarray
    phi_I: np.ndarray
    phi_E: np.ndarray
    v: np.ndarray
    extras: dict = field(default_factory=dict)

    @property
    def m(self) -> int:
        return int(self.v.shape[0])

    @staticmethod
    def field_names(species_names) -> list:
        """Names used by named(), in the same order"""
        return [f"C_{name}_{s}" for s in ("I", "E") for name in species_names] + ["v"]

    def named(self, species_names) -> dict:
        """Flat mapping field name -> (m, m) array, in a fixed order"""
        out = {}
        for s, block in (("I", self.C_I), ("E", self.C_E)):
            for name, values in zip(species_names, block):
                out[f"C_{name}_{s}"] = values
        out["v"] = self.v
        return out


def block_average(values: np.ndarray, weights: np.ndarray, blocks: int) -> np.ndarray:
    """
    Weighted average of an (n, n) array over blocks x blocks equal squares

    Blocks with zero weight get NaN.
    """
    n = values.shape[0]
    k = n // blocks
    v = (values * weights).reshape(blocks, k, blocks, k).sum(axis=(1, 3))
    w = weights.reshape(blocks, k, blocks, k).sum(axis=(1, 3))
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(w > 0, v / np.where(w > 0, w, 1.0), np.nan)


def cell_coordinates(m: int) -> Tuple[np.ndarray, np.ndarray]:
    """Cell-centre coordinates of an m x m grid of (0,1)^2"""
    c = (np.arange(m) + 0.5) / m
    return np.meshgrid(c, c, indexing="ij")


@dataclass
class RunResult:
    """Final state, per-step diagnostics, conservation totals and the snapshots taken on the way"""
    final: object
    diagnostics: object
    snapshots: Dict[int, object] = field(default_factory=dict)
    wall_clock: float = 0.0
    conservation: object = None
