"""
Homogenized bidomain solvers on the macro grid

Connected-disconnected: the extracellular phase diffuses with D_E*, the
intracellular concentrations follow a pointwise ODE and the membrane jump v
relaxes per macro cell. Connected-connected: both phases diffuse and the two
potentials are solved as one coupled system with the capacitor term implicit.
"""
from typing import Dict, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from loguru import logger
from scipy import sparse
from scipy.integrate import solve_ivp

from ionhom.core.errors import InvariantViolationError, PicardDivergenceError, SingularSystemError
from ionhom.models.config import RunConfig
from ionhom.models.geometry import Connectivity, UnitCellGeometry
from ionhom.models.params import ConcentrationBounds, InitialData, PhysicalParams
from ionhom.models.state import EffectiveTensor, MacroState, MembraneSample, RunResult, Subdomain, cell_coordinates
from ionhom.services.cell_problem import compute_effective_tensors
from ionhom.services.diagnostics import BoundMonitor, NormAggregator, check_positive, conservation_frame, run_steps
from ionhom.services.geometry import voxelize_unit_cell
from ionhom.services.linear import (
    PicardSettings,
    SparseSystem,
    component_null_space,
    face_incidence,
    factorize,
    graph_laplacian,
    picard_loop,
    solve_spd,
)
from ionhom.services.membrane import nernst_potentials, pump_current, species_interface_fluxes
from ionhom.services.params import require_valid, validate_params

# tensor entries below this share of D are treated as blocked
TENSOR_FLOOR = 1e-10
OFF_DIAGONAL_TOL = 1e-8


def grid_faces(m: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Interior faces of an m x m grid as (lower, upper, axis)"""
    index = np.arange(m * m).reshape(m, m)
    lower = np.concatenate([index[:-1, :].ravel(), index[:, :-1].ravel()])
    upper = np.concatenate([index[1:, :].ravel(), index[:, 1:].ravel()])
    axis = np.concatenate([np.zeros((m - 1) * m, dtype=np.int64), np.ones(m * (m - 1), dtype=np.int64)])
    return lower, upper, axis


def implicit_membrane_jump(
    params: PhysicalParams, C_I: np.ndarray, C_E: np.ndarray, v_prev: np.ndarray, dt: float
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Backward-Euler step of P_m dv/dt = -(sum G_i (v - E_i) + I_p) with lagged E_i and I_p

    Returns:
        (v, dv/dt); v is held when there is neither conductance nor capacitance
    """
    v_prev = np.asarray(v_prev, dtype=float)
    denominator = params.P_m / dt + float(params.conductances.sum())
    if denominator == 0.0:
        return v_prev.copy(), np.zeros_like(v_prev)
    E = nernst_potentials(params, C_I, C_E)
    I_p = pump_current(params.pump, C_I[0], C_E[1])
    v = (params.P_m * v_prev / dt + params.conductances @ E - I_p) / denominator
    return v, (v - v_prev) / dt


def exchange_flux(
    params: PhysicalParams, C_I: np.ndarray, C_E: np.ndarray, v: np.ndarray, dvdt: np.ndarray
) -> np.ndarray:
    """Molar flux of every species from I to E per unit membrane area, shape (species, ...)"""
    sample = MembraneSample(v=v, C_I=C_I, C_E=C_E, dvdt=dvdt)
    z = params.valences.reshape((-1,) + (1,) * (np.ndim(C_I) - 1))
    return species_interface_fluxes(sample, params) / z


class MacroSolver:
    """
    Backward Euler + Picard for both homogenized regimes

    Fields are flattened to m*m cells internally; the effective tensors
    enter through their diagonals as face transmissibilities.
    """

    def __init__(
        self,
        params: PhysicalParams,
        geometry: UnitCellGeometry,
        run: RunConfig,
        bounds: Optional[ConcentrationBounds] = None,
        tensors: Optional[Mapping[Subdomain, Optional[EffectiveTensor]]] = None,
        m: Optional[int] = None,
    ):
        self.params = params
        self.geometry = geometry
        self.run = run
        self.bounds = bounds or ConcentrationBounds()
        self.connectivity = Connectivity(run.connectivity)
        self.dt = run.dt
        self.m = m or run.macro_cells
        self.H = 1.0 / self.m
        self.z = params.valences
        self.names = params.names
        N = self.m * self.m

        unit = voxelize_unit_cell(geometry, run.cell_resolution)
        self.area_I, self.area_E, self.gamma = unit.area_I, unit.area_E, unit.gamma
        if self.area_I == 0.0 or self.area_E == 0.0 or self.gamma == 0.0:
            raise ValueError(f"{geometry.label()} has no membrane; the homogenized models need both phases")

        if tensors is None:
            tensors = compute_effective_tensors(geometry, run.cell_resolution, params.D, tol=run.linear_tol)
        self.tensors = dict(tensors)
        self.D_E = self._transmissibility(Subdomain.E)
        self.D_I = self._transmissibility(Subdomain.I) if self.connectivity == Connectivity.CON_CON else None

        self.lower, self.upper, self.axis = grid_faces(self.m)
        self._div = face_incidence(N, self.lower, self.upper)
        mass = sparse.identity(N, format="csr") * (self.H ** 2 / self.dt)
        self._lu_E = factorize(mass * self.area_E + self._laplacian(self.D_E, np.ones(N)))
        self._lu_I = None
        if self.D_I is not None:
            self._lu_I = factorize(mass * self.area_I + self._laplacian(self.D_I, np.ones(N)))

        self.source_scale = self.H ** 2 * self.gamma
        self.coupling = self.source_scale * (float(params.conductances.sum()) + params.P_m / self.dt)
        if self.connectivity == Connectivity.CON_CON:
            self.components, self.null_space = component_null_space(
                self._coupled_matrix(np.ones(N), np.ones(N))
            )
            if self.components != 1:
                logger.error(f"Coupled potential system has {self.components} null directions")
                raise SingularSystemError(
                    f"coupled potential system has {self.components} null directions; the gauge removes one",
                    {"components": self.components, "coupling": self.coupling},
                )
        else:
            self.components, self.null_space = component_null_space(self._laplacian(self.D_E, np.ones(N)))

        self.picard = PicardSettings(tol=run.picard_tol, max_iter=run.picard_max_iter, damping=run.picard_damping)
        self.monitor = BoundMonitor(self.bounds)
        logger.info(
            f"Initialized MacroSolver({self.connectivity.value}): m={self.m}, dt={self.dt:g}, "
            f"|Y_I|={self.area_I:.4f}, |Y_E|={self.area_E:.4f}, |Gamma|={self.gamma:.4f}, "
            f"D_E*=diag{tuple(np.round(self.D_E, 8))}"
            + (f", D_I*=diag{tuple(np.round(self.D_I, 8))}" if self.D_I is not None else "")
        )

    def _transmissibility(self, subdomain: Subdomain) -> np.ndarray:
        """Diagonal of an effective tensor with blocked directions set to zero"""
        tensor = self.tensors.get(subdomain)
        if tensor is None:
            raise ValueError(f"no effective tensor for subdomain {subdomain.value}")
        matrix = np.asarray(tensor.matrix, dtype=float)
        scale = max(float(np.abs(matrix).max()), self.params.D)
        off = max(abs(matrix[0, 1]), abs(matrix[1, 0]))
        if off > OFF_DIAGONAL_TOL * scale:
            logger.warning(
                f"D_{subdomain.value}* has off-diagonal entries up to {off:.3e}; only the diagonal is used"
            )
        diagonal = np.diag(matrix).copy()
        diagonal[diagonal < TENSOR_FLOOR * scale] = 0.0
        if not tensor.is_positive_definite():
            logger.warning(f"D_{subdomain.value}* is not positive definite: {diagonal}")
        return diagonal

    def _face_weights(self, diagonal: np.ndarray, sigma: np.ndarray) -> np.ndarray:
        return diagonal[self.axis] * 0.5 * (sigma[self.lower] + sigma[self.upper])

    def _laplacian(self, diagonal: np.ndarray, sigma: np.ndarray) -> sparse.csr_matrix:
        return graph_laplacian(self.m * self.m, self.lower, self.upper, self._face_weights(diagonal, sigma))

    def _coupled_matrix(self, sigma_I: np.ndarray, sigma_E: np.ndarray) -> sparse.csr_matrix:
        N = self.m * self.m
        a = sparse.identity(N, format="csr") * self.coupling
        return sparse.bmat(
            [
                [self._laplacian(self.D_I, sigma_I) + a, -a],
                [-a, self._laplacian(self.D_E, sigma_E) + a],
            ],
            format="csr",
        )

    # -- initial state -----------------------------------------------------

    def initial_state(self, init: InitialData) -> MacroState:
        """
        Sample the initial data at macro cell centres

        Raises:
            ValidationFailedError: if the data breaks an assumption
        """
        require_valid(validate_params(self.params, init, self.bounds))
        x, y = cell_coordinates(self.m)
        C_I = init.concentrations(np.ones(x.shape, dtype=bool), x, y)
        C_E = init.concentrations(np.zeros(x.shape, dtype=bool), x, y)
        v = init.membrane_jump(x, y)
        phi_E = np.zeros_like(v)
        check_positive(C_I, 0.0, self.names)
        check_positive(C_E, 0.0, self.names)
        return MacroState(
            t=0.0,
            step=0,
            C_I=C_I,
            C_E=C_E,
            phi_I=phi_E + v,
            phi_E=phi_E,
            v=v,
            area_I=self.area_I,
            area_E=self.area_E,
            gamma=self.gamma,
        )

    # -- building blocks ---------------------------------------------------

    def membrane_offset(self, C_I: np.ndarray, C_E: np.ndarray, v_prev: np.ndarray) -> np.ndarray:
        """-sum G_i E_i + I_p - P_m v^n / dt per macro cell"""
        E = nernst_potentials(self.params, C_I, C_E)
        I_p = pump_current(self.params.pump, C_I[0], C_E[1])
        return -(self.params.conductances @ E) + I_p - self.params.P_m * v_prev / self.dt

    def coupled_potential_system(self, C_I: np.ndarray, C_E: np.ndarray, v_prev: np.ndarray) -> SparseSystem:
        """
        Both potential equations with v = phi_I - phi_E implicit

        The membrane current |Gamma| (sum G_i (v - E_i) + I_p + P_m dv/dt) leaves
        the I equation and enters the E equation; the constant shift of both
        potentials spans the null space.
        """
        sigma_I = (self.z ** 2) @ C_I
        sigma_E = (self.z ** 2) @ C_E
        matrix = self._coupled_matrix(sigma_I, sigma_E)
        offset = self.source_scale * self.membrane_offset(C_I, C_E, v_prev)
        rhs = np.concatenate([-offset, offset])
        return SparseSystem(matrix, rhs, null_space=self.null_space)

    def potential_residual(
        self, phi_I: np.ndarray, phi_E: np.ndarray, C_I: np.ndarray, C_E: np.ndarray, v_prev: np.ndarray
    ) -> Tuple[np.ndarray, np.ndarray]:
        """Residuals of the two coupled potential equations in flux form"""
        w_I = self._face_weights(self.D_I, (self.z ** 2) @ C_I)
        w_E = self._face_weights(self.D_E, (self.z ** 2) @ C_E)
        offset = self.source_scale * self.membrane_offset(C_I, C_E, v_prev)
        current = self.coupling * (phi_I - phi_E) + offset
        res_I = self._div @ (w_I * (phi_I[self.lower] - phi_I[self.upper])) + current
        res_E = self._div @ (w_E * (phi_E[self.lower] - phi_E[self.upper])) - current
        return res_I, res_E

    def potential_sum_residual(self, phi_I: np.ndarray, phi_E: np.ndarray, C_I: np.ndarray, C_E: np.ndarray) -> float:
        """
        Size of div(sigma_I D_I* grad phi_I) + div(sigma_E D_E* grad phi_E) relative to
        the larger of the two fluxes and the membrane current

        The membrane terms cancel in the sum, so a solved system leaves only
        the linear solver's residual.
        """
        w_I = self._face_weights(self.D_I, (self.z ** 2) @ C_I)
        w_E = self._face_weights(self.D_E, (self.z ** 2) @ C_E)
        flux_I = self._div @ (w_I * (phi_I[self.lower] - phi_I[self.upper]))
        flux_E = self._div @ (w_E * (phi_E[self.lower] - phi_E[self.upper]))
        membrane = self.coupling * float(np.linalg.norm(phi_I - phi_E))
        scale = max(float(np.linalg.norm(flux_I)), float(np.linalg.norm(flux_E)), membrane, np.finfo(float).tiny)
        return float(np.linalg.norm(flux_I + flux_E)) / scale

    def solve_coupled_potential(
        self, C_I: np.ndarray, C_E: np.ndarray, v_prev: np.ndarray, x0: Optional[np.ndarray] = None
    ) -> Tuple[np.ndarray, np.ndarray]:
        """(phi_I, phi_E) with mean(phi_E) = 0"""
        N = self.m * self.m
        system = self.coupled_potential_system(C_I, C_E, v_prev)
        phi = solve_spd(system, self.run.linear_tol, method=self.run.linear_solver.value, x0=x0)
        phi_I, phi_E = phi[:N], phi[N:]
        shift = phi_E.mean()
        return phi_I - shift, phi_E - shift

    def solve_extracellular_potential(self, C_E: np.ndarray, charge_source: np.ndarray) -> np.ndarray:
        """
        -div(sigma_E D_E* grad phi_E) = |Gamma| sum_i z_i F_i with no-flux walls

        With v from the implicit membrane ODE the source is the total membrane
        current, which vanishes up to rounding; the solution is checked to be
        zero after the gauge.

        Raises:
            InvariantViolationError: if phi_E exceeds linear_tol
        """
        system = SparseSystem(self._laplacian(self.D_E, (self.z ** 2) @ C_E), charge_source, null_space=self.null_space)
        system.rhs = system.project(system.rhs)
        phi_E = solve_spd(system, self.run.linear_tol, method=self.run.linear_solver.value)
        phi_E = self._gauge(phi_E)
        size = float(np.abs(phi_E).max()) if phi_E.size else 0.0
        if size > self.run.linear_tol:
            logger.error(f"Extracellular potential is not constant: max |phi_E| = {size:.3e}")
            raise InvariantViolationError(
                "extracellular potential did not vanish under no-flux data",
                {"max_abs_phi_E": size, "linear_tol": self.run.linear_tol},
            )
        return phi_E

    def species_rhs(
        self,
        subdomain: Subdomain,
        C_lag: np.ndarray,
        C_prev: np.ndarray,
        phi: np.ndarray,
        source: np.ndarray,
    ) -> np.ndarray:
        """Right-hand sides of one compartment's implicit diffusion-drift systems"""
        diagonal, area = (self.D_E, self.area_E) if subdomain == Subdomain.E else (self.D_I, self.area_I)
        rhs = (area * self.H ** 2 / self.dt) * C_prev + source
        dphi = phi[self.upper] - phi[self.lower]
        C_face = 0.5 * (C_lag[:, self.lower] + C_lag[:, self.upper])
        drift = -(self.z[:, None] * diagonal[self.axis][None, :]) * C_face * dphi[None, :]
        return rhs - (self._div @ drift.T).T

    def solve_species(self, subdomain: Subdomain, rhs: np.ndarray) -> np.ndarray:
        lu = self._lu_E if subdomain == Subdomain.E else self._lu_I
        return np.stack([lu.solve(row) for row in rhs])

    def _gauge(self, phi: np.ndarray) -> np.ndarray:
        phi = phi.copy()
        labels = np.argmax(self.null_space, axis=0) if self.components > 1 else np.zeros(phi.size, dtype=np.int64)
        for c in range(self.components):
            members = labels == c
            phi[members] -= phi[members].mean()
        return phi

    # -- time stepping -----------------------------------------------------

    def step(self, state: MacroState) -> MacroState:
        """
        One backward-Euler step of the configured regime

        Raises:
            PicardDivergenceError: if the sweep cap is hit
            PositivityLossError: if a concentration becomes nonpositive
        """
        species = len(self.names)
        N = self.m * self.m
        t_new = state.t + self.dt
        C_I_prev = state.C_I.reshape(species, N)
        C_E_prev = state.C_E.reshape(species, N)
        v_prev = state.v.ravel()

        def unpack(x: np.ndarray):
            phi_I, phi_E = x[:N], x[N:2 * N]
            C = x[2 * N:].reshape(2, species, N)
            return phi_I, phi_E, C[0], C[1]

        if self.connectivity == Connectivity.CON_DISCON:
            sweep = self._condiscon_sweep(unpack, C_I_prev, C_E_prev, v_prev, t_new)
        else:
            sweep = self._concon_sweep(unpack, C_I_prev, C_E_prev, v_prev, t_new)

        x0 = np.concatenate([state.phi_I.ravel(), state.phi_E.ravel(), C_I_prev.ravel(), C_E_prev.ravel()])
        try:
            result = picard_loop(sweep, x0, self.picard)
        except PicardDivergenceError as e:
            e.details.update({"t": t_new, "step": state.step + 1})
            raise

        phi_I, phi_E, C_I, C_E = unpack(result.x)
        shape = (self.m, self.m)
        return MacroState(
            t=t_new,
            step=state.step + 1,
            C_I=C_I.reshape((species,) + shape),
            C_E=C_E.reshape((species,) + shape),
            phi_I=phi_I.reshape(shape),
            phi_E=phi_E.reshape(shape),
            v=(phi_I - phi_E).reshape(shape),
            area_I=self.area_I,
            area_E=self.area_E,
            gamma=self.gamma,
            picard_iterations=result.iterations,
        )

    def _condiscon_sweep(self, unpack, C_I_prev, C_E_prev, v_prev, t_new):
        def sweep(x: np.ndarray) -> np.ndarray:
            _, _, C_I, C_E = unpack(x)
            check_positive(C_I, t_new, self.names)
            check_positive(C_E, t_new, self.names)
            v, dvdt = implicit_membrane_jump(self.params, C_I, C_E, v_prev, self.dt)
            flux = exchange_flux(self.params, C_I, C_E, v, dvdt)
            source = self.source_scale * flux
            phi_E = self.solve_extracellular_potential(C_E, self.z @ source)
            C_E_new = self.solve_species(Subdomain.E, self.species_rhs(Subdomain.E, C_E, C_E_prev, phi_E, source))
            C_I_new = C_I_prev - (self.dt * self.gamma / self.area_I) * flux
            check_positive(C_I_new, t_new, self.names)
            check_positive(C_E_new, t_new, self.names)
            return np.concatenate([phi_E + v, phi_E, C_I_new.ravel(), C_E_new.ravel()])

        return sweep

    def _concon_sweep(self, unpack, C_I_prev, C_E_prev, v_prev, t_new):
        def sweep(x: np.ndarray) -> np.ndarray:
            phi_I, phi_E, C_I, C_E = unpack(x)
            check_positive(C_I, t_new, self.names)
            check_positive(C_E, t_new, self.names)
            guess = np.concatenate([phi_I, phi_E])
            phi_I, phi_E = self.solve_coupled_potential(C_I, C_E, v_prev, x0=guess)
            v = phi_I - phi_E
            dvdt = (v - v_prev) / self.dt
            source = self.source_scale * exchange_flux(self.params, C_I, C_E, v, dvdt)
            C_I_new = self.solve_species(Subdomain.I, self.species_rhs(Subdomain.I, C_I, C_I_prev, phi_I, -source))
            C_E_new = self.solve_species(Subdomain.E, self.species_rhs(Subdomain.E, C_E, C_E_prev, phi_E, source))
            check_positive(C_I_new, t_new, self.names)
            check_positive(C_E_new, t_new, self.names)
            return np.concatenate([phi_I, phi_E, C_I_new.ravel(), C_E_new.ravel()])

        return sweep

    def simulate(
        self,
        state: MacroState,
        n_steps: Optional[int] = None,
        snapshot_steps: Sequence[int] = (),
    ) -> RunResult:
        """Advance n_steps (default T_end/dt), recording diagnostics and conservation totals"""
        n_steps = self.run.n_steps if n_steps is None else n_steps
        return run_steps(self, state, n_steps, snapshot_steps, label=f"Macro {self.connectivity.value} run")

    # -- diagnostics -------------------------------------------------------

    def norms(self, state: MacroState) -> Dict[str, float]:
        """Macro analogues of the micro norms, weighted by the phase measures"""
        species = len(self.names)
        H2 = self.H ** 2
        C_I = state.C_I.reshape(species, -1)
        C_E = state.C_E.reshape(species, -1)
        phi_I, phi_E, v = state.phi_I.ravel(), state.phi_E.ravel(), state.v.ravel()

        def face_sq(values: np.ndarray) -> float:
            return float(np.sum((values[..., self.upper] - values[..., self.lower]) ** 2))

        return {
            "c_l2": float(np.sqrt(H2 * (self.area_I * np.sum(C_I ** 2) + self.area_E * np.sum(C_E ** 2)))),
            "grad_c": float(np.sqrt(self.area_I * face_sq(C_I) + self.area_E * face_sq(C_E))),
            "trace_c": float(np.sqrt(self.gamma * H2 * (np.sum(C_I ** 2) + np.sum(C_E ** 2)))),
            "trace_v": float(np.sqrt(self.gamma * H2 * np.sum(v ** 2))),
            "phi_h1": float(np.sqrt(
                H2 * (self.area_I * np.sum(phi_I ** 2) + self.area_E * np.sum(phi_E ** 2))
                + self.area_I * face_sq(phi_I) + self.area_E * face_sq(phi_E)
            )),
        }

    def diagnostics_row(self, state: MacroState, aggregator: NormAggregator) -> Dict[str, float]:
        species = len(self.names)
        C_I = state.C_I.reshape(species, -1)
        C_E = state.C_E.reshape(species, -1)
        row = {"t": state.t}
        totals = self.conservation_row(state)
        row.update({f"total_{name}": totals[f"total_{name}"] for name in self.names})
        row["en_drift"] = float(max(np.abs(self.z @ C_I).max(), np.abs(self.z @ C_E).max()))
        row["c_min"] = float(min(C_I.min(), C_E.min()))
        row["c_max"] = float(max(C_I.max(), C_E.max()))
        row["sigma_min"] = float(min(((self.z ** 2) @ C_I).min(), ((self.z ** 2) @ C_E).min()))
        norms = self.norms(state)
        row.update(norms)
        row.update(aggregator.update(state.t, norms))
        row["picard_iterations"] = float(state.picard_iterations)
        return row

    def conservation_row(self, state: MacroState) -> Dict[str, float]:
        return conservation_row(state, self.names)


def conservation_row(state: MacroState, species_names: Sequence[str]) -> Dict[str, float]:
    """|Y_I| int C_I, |Y_E| int C_E and their sum per species"""
    species = len(species_names)
    m = state.C_I.shape[-1]
    cell = 1.0 / (m * m)
    inside = state.area_I * state.C_I.reshape(species, -1).sum(axis=1) * cell
    outside = state.area_E * state.C_E.reshape(species, -1).sum(axis=1) * cell
    row = {"t": state.t}
    for name, a, b in zip(species_names, inside, outside):
        row[f"total_{name}"] = float(a + b)
        row[f"total_{name}_I"] = float(a)
        row[f"total_{name}_E"] = float(b)
    return row


def macro_conservation_report(history: Sequence[MacroState], species_names: Sequence[str]) -> pd.DataFrame:
    """
    Time series of |Y_I| int C_I + |Y_E| int C_E per species

    Columns: t, total_<sp>, total_<sp>_I, total_<sp>_E, drift_<sp>
    """
    return conservation_frame([conservation_row(state, species_names) for state in history], species_names)


def init_macro(
    params: PhysicalParams,
    geometry: UnitCellGeometry,
    init: InitialData,
    run: RunConfig,
    bounds: Optional[ConcentrationBounds] = None,
    m: Optional[int] = None,
) -> Tuple[MacroSolver, MacroState]:
    solver = MacroSolver(params, geometry, run, bounds, m=m)
    return solver, solver.initial_state(init)


def step_condiscon(solver: MacroSolver, state: MacroState) -> MacroState:
    if solver.connectivity != Connectivity.CON_DISCON:
        raise ValueError("solver is not configured for the connected-disconnected model")
    return solver.step(state)


def step_concon(solver: MacroSolver, state: MacroState) -> MacroState:
    if solver.connectivity != Connectivity.CON_CON:
        raise ValueError("solver is not configured for the connected-connected model")
    return solver.step(state)


class PointModel:
    """
    Spatially uniform macro system with unknowns (C_I, C_E, v), seven in all

    |Y_I| C_I' = -|Gamma| F, |Y_E| C_E' = |Gamma| F and
    P_m v' = -(sum G_i (v - E_i) + I_p), F being the molar exchange flux.
    """

    def __init__(self, params: PhysicalParams, area_I: float, area_E: float, gamma: float):
        if area_I <= 0.0 or area_E <= 0.0:
            raise ValueError("both phases need positive measure")
        self.params = params
        self.area_I = float(area_I)
        self.area_E = float(area_E)
        self.gamma = float(gamma)
        self.species = len(params.species)

    @classmethod
    def from_geometry(cls, params: PhysicalParams, geometry: UnitCellGeometry, n: int) -> "PointModel":
        unit = voxelize_unit_cell(geometry, n)
        return cls(params, unit.area_I, unit.area_E, unit.gamma)

    def pack(self, C_I: np.ndarray, C_E: np.ndarray, v: float) -> np.ndarray:
        return np.concatenate([np.asarray(C_I, dtype=float), np.asarray(C_E, dtype=float), [float(v)]])

    def unpack(self, y: np.ndarray) -> Tuple[np.ndarray, np.ndarray, float]:
        k = self.species
        return y[:k], y[k:2 * k], float(y[2 * k])

    def rhs(self, t: float, y: np.ndarray) -> np.ndarray:
        """Time derivative of the packed state; needs P_m > 0"""
        if self.params.P_m <= 0.0:
            raise ValueError("the explicit form needs a positive membrane capacitance")
        C_I, C_E, v = self.unpack(y)
        E = nernst_potentials(self.params, C_I, C_E)
        I_p = float(pump_current(self.params.pump, C_I[0], C_E[1]))
        dvdt = -(float(self.params.conductances @ (v - E)) + I_p) / self.params.P_m
        flux = exchange_flux(self.params, C_I, C_E, np.asarray(v), np.asarray(dvdt))
        return np.concatenate([
            -self.gamma * flux / self.area_I,
            self.gamma * flux / self.area_E,
            [dvdt],
        ])

    def step(self, y: np.ndarray, dt: float, settings: Optional[PicardSettings] = None) -> Tuple[np.ndarray, int]:
        """One backward-Euler step with Picard over the log and pump terms"""
        settings = settings or PicardSettings()
        C_I_prev, C_E_prev, v_prev = self.unpack(y)
        v_prev = np.asarray(v_prev)

        def sweep(x: np.ndarray) -> np.ndarray:
            C_I, C_E, _ = self.unpack(x)
            v, dvdt = implicit_membrane_jump(self.params, C_I, C_E, v_prev, dt)
            flux = exchange_flux(self.params, C_I, C_E, v, dvdt)
            return self.pack(
                C_I_prev - dt * self.gamma * flux / self.area_I,
                C_E_prev + dt * self.gamma * flux / self.area_E,
                float(v),
            )

        result = picard_loop(sweep, y, settings)
        return result.x, result.iterations

    def integrate_backward_euler(
        self, y0: np.ndarray, T: float, dt: float, settings: Optional[PicardSettings] = None
    ) -> Tuple[np.ndarray, np.ndarray]:
        """(times, states) of the backward-Euler trajectory"""
        n_steps = max(1, int(round(T / dt)))
        times = np.arange(n_steps + 1) * dt
        states = np.empty((n_steps + 1, y0.size))
        states[0] = y0
        y = np.asarray(y0, dtype=float)
        for k in range(n_steps):
            y, _ = self.step(y, dt, settings)
            states[k + 1] = y
        return times, states

    def integrate_reference(
        self, y0: np.ndarray, T: float, times: Optional[np.ndarray] = None, rtol: float = 1e-11, atol: float = 1e-12
    ) -> Tuple[np.ndarray, np.ndarray]:
        """
        Adaptive Runge-Kutta trajectory used as an independent oracle

        Returns:
            (times, states) with states of shape (len(times), 7)
        """
        t_eval = np.array([0.0, T]) if times is None else np.asarray(times, dtype=float)
        solution = solve_ivp(self.rhs, (0.0, T), np.asarray(y0, dtype=float), method="RK45", t_eval=t_eval, rtol=rtol, atol=atol)
        if not solution.success:
            raise InvariantViolationError(f"reference integration failed: {solution.message}", {"T": T})
        logger.debug(f"Reference point-model integration: {solution.nfev} evaluations")
        return solution.t, solution.y.T


def uniform_macro_trajectory(state: MacroState) -> np.ndarray:
    """Packed point-model state of a spatially uniform macro state (first cell)"""
    species = state.C_I.shape[0]
    return np.concatenate([
        state.C_I.reshape(species, -1)[:, 0],
        state.C_E.reshape(species, -1)[:, 0],
        [float(state.v.ravel()[0])],
    ])

