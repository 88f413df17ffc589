"""Run configuration and its flat key-value form"""
from enum import Enum
from typing import Dict, Mapping, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from ionhom.core.config import parse_list
from ionhom.models.geometry import Connectivity, Shape, UnitCellGeometry
from ionhom.models.params import (
    ConcentrationBounds,
    ConcentrationPatch,
    InitialData,
    PhysicalParams,
    PumpParams,
    SpeciesSpec,
    default_species,
)

EPSILON_INV_TOL = 1e-9


class RunMode(str, Enum):
    MICRO = "micro"
    MACRO = "macro"
    CELL_PROBLEM = "cell-problem"


class LinearSolverKind(str, Enum):
    DIRECT = "direct"
    CG = "cg"


class RunConfig(BaseModel):
    """Discretisation and solver controls"""
    model_config = ConfigDict(frozen=True)

    mode: RunMode = Field(RunMode.MICRO, description="What run_single executes")
    connectivity: Connectivity = Field(Connectivity.CON_DISCON, description="Which homogenized model applies")
    epsilon_inv: int = Field(4, ge=1, description="1/epsilon, number of cells per side of the tissue")
    grid_resolution: int = Field(64, ge=1, description="Micro cells per unit length")
    dt: float = Field(1e-3, gt=0.0, description="Time step")
    T_end: float = Field(0.5, gt=0.0, description="Final time")
    picard_tol: float = Field(1e-10, gt=0.0, description="Picard relative-change tolerance")
    picard_max_iter: int = Field(50, ge=1, description="Picard iteration cap")
    picard_damping: float = Field(1.0, gt=0.0, le=1.0, description="Picard damping factor")
    linear_tol: float = Field(1e-12, gt=0.0, description="Relative residual tolerance of linear solves")
    linear_solver: LinearSolverKind = Field(LinearSolverKind.DIRECT, description="Solver for time-stepping systems")
    cell_resolution: int = Field(64, ge=8, description="Unit-cell resolution for the cell problems")
    macro_resolution: Optional[int] = Field(None, ge=1, description="Macro cells per side, defaults to epsilon_inv")
    snapshots: Tuple[float, ...] = Field((0.25, 0.5, 1.0), description="Snapshot times as fractions of T_end")
    epsilons: Tuple[int, ...] = Field((2, 4, 8), description="Epsilon denominators for the convergence study")

    @field_validator("snapshots")
    @classmethod
    def _check_snapshots(cls, value: Tuple[float, ...]) -> Tuple[float, ...]:
        if not value or any(not 0.0 < f <= 1.0 for f in value):
            raise ValueError("snapshot fractions must lie in (0, 1]")
        return tuple(sorted(set(value)))

    @field_validator("epsilons")
    @classmethod
    def _check_epsilons(cls, value: Tuple[int, ...]) -> Tuple[int, ...]:
        if any(e < 1 for e in value):
            raise ValueError("epsilon denominators must be positive integers")
        return tuple(value)

    @model_validator(mode="after")
    def _check_resolution(self) -> "RunConfig":
        if self.grid_resolution % self.epsilon_inv != 0:
            raise ValueError(
                f"grid_resolution {self.grid_resolution} is not divisible by 1/epsilon = {self.epsilon_inv}"
            )
        if self.macro_resolution is not None and self.macro_resolution < 1:
            raise ValueError("macro_resolution must be positive")
        return self

    @property
    def epsilon(self) -> float:
        return 1.0 / self.epsilon_inv

    @property
    def n_per_cell(self) -> int:
        return self.grid_resolution // self.epsilon_inv

    @property
    def n_steps(self) -> int:
        return max(1, int(round(self.T_end / self.dt)))

    @property
    def macro_cells(self) -> int:
        return self.macro_resolution or self.epsilon_inv

    def snapshot_steps(self) -> Tuple[int, ...]:
        """Step indices of the snapshot times"""
        return tuple(sorted({max(1, int(round(f * self.n_steps))) for f in self.snapshots}))

    def for_epsilon(self, epsilon_inv: int) -> "RunConfig":
        """Same run with another epsilon, keeping the per-cell resolution"""
        return self.model_copy(update={"epsilon_inv": epsilon_inv, "grid_resolution": epsilon_inv * self.n_per_cell})


class SimulationConfig(BaseModel):
    """Everything a run needs"""
    model_config = ConfigDict(frozen=True)

    physics: PhysicalParams
    initial: InitialData
    bounds: ConcentrationBounds = Field(default_factory=ConcentrationBounds)
    geometry: UnitCellGeometry
    run: RunConfig = Field(default_factory=RunConfig)

    @classmethod
    def default(cls) -> "SimulationConfig":
        from ionhom.services.params import default_params

        physics, initial = default_params()
        return cls(
            physics=physics,
            initial=initial,
            bounds=ConcentrationBounds(),
            geometry=UnitCellGeometry.centered_square(0.5),
            run=RunConfig(),
        )

    @classmethod
    def from_flat(cls, values: Mapping[str, str]) -> "SimulationConfig":
        """
        Build a configuration from dotted keys, starting from the defaults

        Args:
            values: Mapping such as {"physics.D": "1", "run.connectivity": "con_con"}

        Returns:
            Validated SimulationConfig
        """
        base = cls.default()
        names = base.physics.names
        values = dict(values)

        physics = base.physics.model_dump()
        pump = base.physics.pump.model_dump()
        initial = base.initial.model_dump()
        bounds = base.bounds.model_dump()
        run = base.run.model_dump()
        geometry_shape = base.geometry.shape.value
        geometry_size: Dict[str, float] = {}

        G = list(base.physics.G)
        lambdas = [s.capacitor_weight for s in base.physics.species]
        C0_I = list(base.initial.C0_I)
        C0_E = list(base.initial.C0_E)
        patches: Dict[int, Dict[str, object]] = {}

        unknown = []
        for key, raw in values.items():
            section, _, rest = key.partition(".")
            if section == "physics":
                if rest in ("D", "P_m"):
                    physics[rest] = float(raw)
                elif rest.startswith("G."):
                    G[_species_index(names, rest[2:], key)] = float(raw)
                elif rest.startswith("lambda."):
                    lambdas[_species_index(names, rest[7:], key)] = float(raw)
                else:
                    unknown.append(key)
            elif section == "pump":
                if rest in pump:
                    pump[rest] = float(raw)
                else:
                    unknown.append(key)
            elif section == "init":
                if rest.startswith("C_I."):
                    C0_I[_species_index(names, rest[4:], key)] = float(raw)
                elif rest.startswith("C_E."):
                    C0_E[_species_index(names, rest[4:], key)] = float(raw)
                elif rest in ("phi0", "perturbation"):
                    initial[rest] = float(raw)
                elif rest.startswith("patch."):
                    _patch_entry(patches, names, rest[6:], raw, key)
                else:
                    unknown.append(key)
            elif section == "bounds":
                if rest in bounds:
                    bounds[rest] = float(raw)
                else:
                    unknown.append(key)
            elif section == "geometry":
                if rest == "shape":
                    geometry_shape = raw
                elif rest in ("a", "w", "theta"):
                    geometry_size[rest] = float(raw)
                else:
                    unknown.append(key)
            elif section == "run":
                if rest == "epsilon":
                    run["epsilon_inv"] = epsilon_to_inverse(float(raw))
                elif rest in ("snapshots",):
                    run[rest] = tuple(float(v) for v in parse_list(raw))
                elif rest in ("epsilons",):
                    run[rest] = tuple(int(v) for v in parse_list(raw))
                elif rest == "n_per_cell":
                    run["_n_per_cell"] = int(raw)
                elif rest in run:
                    run[rest] = raw
                else:
                    unknown.append(key)
            else:
                unknown.append(key)

        if unknown:
            raise ValueError(f"unknown configuration keys: {sorted(unknown)}")

        n_per_cell = run.pop("_n_per_cell", None)
        if n_per_cell is not None:
            run["grid_resolution"] = int(run["epsilon_inv"]) * n_per_cell
        elif "run.grid_resolution" not in values:
            # keep the default per-cell resolution when only epsilon changes
            run["grid_resolution"] = int(run["epsilon_inv"]) * base.run.n_per_cell

        species = tuple(
            SpeciesSpec(name=s.name, valence=s.valence, capacitor_weight=lam)
            for s, lam in zip(default_species(), lambdas)
        )
        physics["species"] = species
        physics["G"] = tuple(G)
        physics["pump"] = PumpParams(**pump)
        initial["C0_I"] = tuple(C0_I)
        initial["C0_E"] = tuple(C0_E)
        initial["patches"] = tuple(_build_patch(patches[k], names, k) for k in sorted(patches))

        shape = Shape(geometry_shape)
        size_key = {Shape.CENTERED_SQUARE: "a", Shape.CROSS_CHANNEL: "w", Shape.STRIPE: "theta"}.get(shape)
        if size_key is None:
            geometry = UnitCellGeometry.empty()
        else:
            default_size = base.geometry.size if shape == base.geometry.shape else 0.5
            geometry = UnitCellGeometry(shape=shape, size=geometry_size.get(size_key, default_size))

        return cls(
            physics=PhysicalParams(**physics),
            initial=InitialData(**initial),
            bounds=ConcentrationBounds(**bounds),
            geometry=geometry,
            run=RunConfig(**run),
        )

    def to_flat(self) -> Dict[str, str]:
        """Resolved configuration as dotted keys, in a stable order"""
        flat: Dict[str, str] = {"physics.D": repr(self.physics.D), "physics.P_m": repr(self.physics.P_m)}
        for spec, g in zip(self.physics.species, self.physics.G):
            flat[f"physics.G.{spec.name}"] = repr(g)
        for spec in self.physics.species:
            flat[f"physics.lambda.{spec.name}"] = repr(spec.capacitor_weight)
        for key, value in self.physics.pump.model_dump().items():
            flat[f"pump.{key}"] = repr(value)
        for spec, c_in, c_out in zip(self.physics.species, self.initial.C0_I, self.initial.C0_E):
            flat[f"init.C_I.{spec.name}"] = repr(c_in)
            flat[f"init.C_E.{spec.name}"] = repr(c_out)
        flat["init.phi0"] = repr(self.initial.phi0)
        flat["init.perturbation"] = repr(self.initial.perturbation)
        for k, patch in enumerate(self.initial.patches):
            flat[f"init.patch.{k}.x"] = repr(patch.x)
            flat[f"init.patch.{k}.y"] = repr(patch.y)
            flat[f"init.patch.{k}.radius"] = repr(patch.radius)
            flat[f"init.patch.{k}.compartment"] = patch.compartment
            for spec, value in zip(self.physics.species, patch.values):
                flat[f"init.patch.{k}.{spec.name}"] = repr(value)
        for key, value in self.bounds.model_dump().items():
            flat[f"bounds.{key}"] = repr(value)
        flat["geometry.shape"] = self.geometry.shape.value
        size_key = {Shape.CENTERED_SQUARE: "a", Shape.CROSS_CHANNEL: "w", Shape.STRIPE: "theta"}.get(self.geometry.shape)
        if size_key is not None:
            flat[f"geometry.{size_key}"] = repr(self.geometry.size)
        for key, value in self.run.model_dump(mode="json").items():
            if value is None:
                continue
            if isinstance(value, list):
                value = ",".join(str(v) for v in value)
            flat[f"run.{key}"] = str(value)
        return flat


def epsilon_to_inverse(epsilon: float) -> int:
    """Check that 1/epsilon is a positive integer and return it"""
    if epsilon <= 0.0 or epsilon > 1.0:
        raise ValueError(f"epsilon must lie in (0, 1], got {epsilon}")
    inverse = 1.0 / epsilon
    rounded = int(round(inverse))
    if abs(inverse - rounded) > EPSILON_INV_TOL * max(1.0, inverse):
        raise ValueError(f"1/epsilon must be a positive integer, got 1/{epsilon} = {inverse}")
    return rounded


def _species_index(names, name: str, key: str) -> int:
    if name not in names:
        raise ValueError(f"unknown species '{name}' in key {key}; expected one of {names}")
    return names.index(name)


def _patch_entry(patches: Dict[int, Dict[str, object]], names, rest: str, raw: str, key: str):
    """init.patch.<k>.<field> into patches[k]"""
    index, _, field = rest.partition(".")
    if not index.isdigit() or not field:
        raise ValueError(f"expected init.patch.<k>.<field>, got {key}")
    entry = patches.setdefault(int(index), {"values": {}})
    if field == "compartment":
        entry[field] = raw.strip()
    elif field in ("x", "y", "radius"):
        entry[field] = float(raw)
    else:
        entry["values"][_species_index(names, field, key)] = float(raw)


def _build_patch(entry: Dict[str, object], names, k: int) -> ConcentrationPatch:
    values = entry.pop("values")
    missing = [name for i, name in enumerate(names) if i not in values]
    if missing:
        raise ValueError(f"init.patch.{k} needs a value for every species, missing {missing}")
    return ConcentrationPatch(**entry, values=tuple(values[i] for i in range(len(names))))
