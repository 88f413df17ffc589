"""
Microscale electroneutral bidomain solver

Cell-centred finite volumes on the epsilon-tiled grid. Every cell carries the
concentrations and potential of its own subdomain; interface faces couple an
I-cell to an E-cell through the membrane laws with surface measure epsilon*h.
"""
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
from loguru import logger
from scipy import sparse

from ionhom.core.errors import PicardDivergenceError
from ionhom.models.config import RunConfig
from ionhom.models.params import ConcentrationBounds, InitialData, PhysicalParams
from ionhom.models.reports import DiagnosticsRecord
from ionhom.models.state import MacroFields, MembraneSample, MicroState, RunResult, TaggedGrid, block_average
from ionhom.services.diagnostics import BoundMonitor, NormAggregator, check_positive, diagnostic_columns, run_steps
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


def same_subdomain_faces(grid: TaggedGrid) -> Tuple[np.ndarray, np.ndarray]:
    """Interior faces whose two cells share a tag; the outer boundary carries no flux"""
    n = grid.n
    index = np.arange(n * n).reshape(n, n)
    mask = grid.intracellular
    lows, highs = [], []
    for lo, hi, m_lo, m_hi in (
        (index[:-1, :], index[1:, :], mask[:-1, :], mask[1:, :]),
        (index[:, :-1], index[:, 1:], mask[:, :-1], mask[:, 1:]),
    ):
        same = m_lo == m_hi
        lows.append(lo[same])
        highs.append(hi[same])
    return np.concatenate(lows), np.concatenate(highs)


class MicroSolver:
    """
    Backward Euler + Picard for the microscale system

    Each Picard sweep solves the potential with lagged concentrations, reads
    the membrane jump off the new potential and then advances the three
    species with implicit diffusion and lagged drift/membrane terms.
    """

    def __init__(
        self,
        grid: TaggedGrid,
        params: PhysicalParams,
        run: RunConfig,
        bounds: Optional[ConcentrationBounds] = None,
    ):
        self.grid = grid
        self.params = params
        self.run = run
        self.bounds = bounds or ConcentrationBounds()
        self.dt = run.dt
        self.h = grid.h
        self.epsilon = 1.0 / grid.epsilon_inv
        self.face_measure = self.epsilon * self.h
        self.z = params.valences
        self.names = params.names
        N = grid.cell_count

        self.lower, self.upper = same_subdomain_faces(grid)
        self.inner, self.outer = grid.faces.inner, grid.faces.outer
        self._div_same = face_incidence(N, self.lower, self.upper)
        self._div_membrane = face_incidence(N, self.inner, self.outer)

        laplacian = graph_laplacian(N, self.lower, self.upper, params.D)
        self._species_lu = factorize(sparse.identity(N, format="csr") * (self.h ** 2 / self.dt) + laplacian)

        self.total_G = float(params.conductances.sum())
        self.kappa = self.face_measure * (self.total_G + params.P_m / self.dt)
        self.coupled = self.kappa > 0.0
        if self.coupled:
            pattern = graph_laplacian(
                N, np.concatenate([self.lower, self.inner]), np.concatenate([self.upper, self.outer]), 1.0
            )
        else:
            pattern = graph_laplacian(N, self.lower, self.upper, 1.0)
        self.components, self.null_space = component_null_space(pattern)
        self._labels = np.argmax(self.null_space, axis=0)

        self.picard = PicardSettings(tol=run.picard_tol, max_iter=run.picard_max_iter, damping=run.picard_damping)
        self.monitor = BoundMonitor(self.bounds)
        logger.info(
            f"Initialized MicroSolver: n={grid.n}, epsilon=1/{grid.epsilon_inv}, dt={self.dt:g}, "
            f"{self.lower.size} transport faces, {self.inner.size} membrane faces, "
            f"{self.components} potential component(s), solver={run.linear_solver.value}"
        )

    # -- initial state -----------------------------------------------------

    def initial_state(self, init: InitialData) -> MicroState:
        """
        Sample the initial data onto cells and faces

        The initial potential is written down in closed form, not obtained
        from a linear solve: phi0 on I-cells and 0 on E-cells. With a
        constant jump this piecewise constant field has zero gradients, so it
        satisfies flux continuity and the E-mean gauge exactly. The first
        step's potential solve replaces it.

        Raises:
            ValidationFailedError: if the sampled data breaks an assumption
        """
        require_valid(validate_params(self.params, init, self.bounds, grid=self.grid))
        x, y = self.grid.centers()
        C = init.concentrations(self.grid.intracellular, x, y).reshape(len(self.names), -1)

        fx, fy = self.face_centers()
        v = init.membrane_jump(fx, fy).astype(float)
        phi = np.where(self.grid.mask_I, float(init.phi0), 0.0)
        phi = self._gauge(phi)
        check_positive(C, 0.0, self.names)
        return MicroState(t=0.0, step=0, C=C, phi=phi, v=v)

    def face_centers(self) -> Tuple[np.ndarray, np.ndarray]:
        """Midpoints of the interface faces"""
        x, y = self.grid.centers()
        x, y = x.ravel(), y.ravel()
        return 0.5 * (x[self.inner] + x[self.outer]), 0.5 * (y[self.inner] + y[self.outer])

    # -- assembly ----------------------------------------------------------

    def membrane_offset(self, C_lag: np.ndarray, v_prev: np.ndarray) -> np.ndarray:
        """Per face: -sum G_i E_i + I_p - P_m v^n / dt"""
        C_in, C_out = C_lag[:, self.inner], C_lag[:, self.outer]
        E = nernst_potentials(self.params, C_in, C_out)
        I_p = pump_current(self.params.pump, C_in[0], C_out[1])
        return -(self.params.conductances @ E) + I_p - self.params.P_m * v_prev / self.dt

    def potential_system(self, C_lag: np.ndarray, v_prev: np.ndarray) -> SparseSystem:
        """
        Sum over species of z_i times the species balances

        Transport faces carry D*sigma_face with sigma = sum z_i^2 C_i at lagged
        concentrations; membrane faces carry kappa = eps*h*(sum G + P_m/dt).
        """
        N = self.grid.cell_count
        sigma = (self.z ** 2) @ C_lag
        weights = self.params.D * 0.5 * (sigma[self.lower] + sigma[self.upper])
        if self.coupled:
            matrix = graph_laplacian(
                N,
                np.concatenate([self.lower, self.inner]),
                np.concatenate([self.upper, self.outer]),
                np.concatenate([weights, np.full(self.inner.size, self.kappa)]),
            )
        else:
            matrix = graph_laplacian(N, self.lower, self.upper, weights)
        offset = self.membrane_offset(C_lag, v_prev)
        rhs = -(self._div_membrane @ (self.face_measure * offset))
        return SparseSystem(matrix, rhs, null_space=self.null_space)

    def potential_residual(self, phi: np.ndarray, C_lag: np.ndarray, v_prev: np.ndarray) -> np.ndarray:
        """Residual of the potential balance in flux form"""
        sigma = (self.z ** 2) @ C_lag
        weights = self.params.D * 0.5 * (sigma[self.lower] + sigma[self.upper])
        transport = weights * (phi[self.lower] - phi[self.upper])
        residual = self._div_same @ transport
        if self.coupled:
            jump = phi[self.inner] - phi[self.outer]
            offset = self.membrane_offset(C_lag, v_prev)
            residual = residual + self._div_membrane @ (self.kappa * jump + self.face_measure * offset)
        return residual

    def solve_potential(self, C_lag: np.ndarray, v_prev: np.ndarray, x0: Optional[np.ndarray] = None) -> np.ndarray:
        system = self.potential_system(C_lag, v_prev)
        phi = solve_spd(system, self.run.linear_tol, method=self.run.linear_solver.value, x0=x0)
        return self._gauge(phi)

    def membrane_jump(self, phi: np.ndarray, v_prev: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """v from the potential traces and the discrete dv/dt"""
        if not self.coupled:
            # no conductance and no capacitance: the jump is not driven
            return v_prev.copy(), np.zeros_like(v_prev)
        v = phi[self.inner] - phi[self.outer]
        return v, (v - v_prev) / self.dt

    def species_rhs(
        self, C_lag: np.ndarray, C_prev: np.ndarray, phi: np.ndarray, v: np.ndarray, dvdt: np.ndarray
    ) -> np.ndarray:
        """Right-hand sides of the three species systems, shape (species, cells)"""
        rhs = (self.h ** 2 / self.dt) * C_prev
        dphi = phi[self.upper] - phi[self.lower]
        C_face = 0.5 * (C_lag[:, self.lower] + C_lag[:, self.upper])
        # drift flux from the lower to the upper cell of each face
        drift = -(self.z[:, None] * self.params.D) * C_face * dphi[None, :]
        rhs = rhs - (self._div_same @ drift.T).T

        if self.inner.size:
            exchange = self.face_membrane_fluxes(C_lag, v, dvdt)
            rhs = rhs - (self._div_membrane @ exchange.T).T
        return rhs

    def face_membrane_fluxes(self, C_lag: np.ndarray, v: np.ndarray, dvdt: np.ndarray) -> np.ndarray:
        """Moles of each species leaving the I-cell per unit time through each face"""
        sample = MembraneSample(v=v, C_I=C_lag[:, self.inner], C_E=C_lag[:, self.outer], dvdt=dvdt)
        flux = species_interface_fluxes(sample, self.params)
        return self.face_measure * flux / self.z[:, None]

    def solve_species(self, rhs: np.ndarray) -> np.ndarray:
        return np.stack([self._species_lu.solve(row) for row in rhs])

    # -- time stepping -----------------------------------------------------

    def step(self, state: MicroState) -> MicroState:
        """
        One backward-Euler step

        Raises:
            PicardDivergenceError: if the sweep cap is hit
            PositivityLossError: if a concentration becomes nonpositive
        """
        N = self.grid.cell_count
        t_new = state.t + self.dt
        C_prev, v_prev = state.C, state.v

        def sweep(x: np.ndarray) -> np.ndarray:
            C_lag = x[N:].reshape(C_prev.shape)
            check_positive(C_lag, t_new, self.names)
            phi = self.solve_potential(C_lag, v_prev, x0=x[:N])
            v, dvdt = self.membrane_jump(phi, v_prev)
            C_new = self.solve_species(self.species_rhs(C_lag, C_prev, phi, v, dvdt))
            check_positive(C_new, t_new, self.names)
            return np.concatenate([phi, C_new.ravel()])

        x0 = np.concatenate([state.phi, C_prev.ravel()])
        try:
            result = picard_loop(sweep, x0, self.picard)
        except PicardDivergenceError as e:
            e.details.update({"t": t_new, "step": state.step + 1})
            raise

        phi = result.x[:N]
        C = result.x[N:].reshape(C_prev.shape)
        v, _ = self.membrane_jump(phi, v_prev)
        if result.iterations > max(3, self.picard.max_iter // 2):
            logger.warning(f"Picard needed {result.iterations} sweeps at t={t_new:.6g}")
        return MicroState(t=t_new, step=state.step + 1, C=C, phi=phi, v=v, picard_iterations=result.iterations)

    def simulate(
        self,
        state: MicroState,
        n_steps: Optional[int] = None,
        snapshot_steps: Sequence[int] = (),
    ) -> RunResult:
        """
        Advance n_steps (default: the configured T_end/dt), recording diagnostics

        Args:
            state: Initial state
            n_steps: Number of steps
            snapshot_steps: Step indices whose states are kept

        Returns:
            RunResult with the final state, diagnostics, conservation totals and snapshots
        """
        n_steps = self.run.n_steps if n_steps is None else n_steps
        return run_steps(self, state, n_steps, snapshot_steps, label="Micro run")

    # -- diagnostics -------------------------------------------------------

    def norms(self, state: MicroState) -> Dict[str, float]:
        """Instantaneous discrete analogues of the a priori bounded quantities"""
        h2 = self.h ** 2
        C, phi, v = state.C, state.phi, state.v
        dC = C[:, self.upper] - C[:, self.lower]
        dphi = phi[self.upper] - phi[self.lower]
        traces = (C[:, self.inner] ** 2 + C[:, self.outer] ** 2).sum()
        return {
            "c_l2": float(np.sqrt(np.sum(C ** 2) * h2)),
            "grad_c": float(np.sqrt(np.sum(dC ** 2))),
            "trace_c": float(np.sqrt(self.face_measure * traces)),
            "trace_v": float(np.sqrt(self.face_measure * np.sum(v ** 2))),
            "phi_h1": float(np.sqrt(np.sum(phi ** 2) * h2 + np.sum(dphi ** 2))),
        }

    def conservation_row(self, state: MicroState) -> Dict[str, float]:
        totals = state.C.sum(axis=1) * self.h ** 2
        row = {"t": state.t}
        row.update({f"total_{name}": float(total) for name, total in zip(self.names, totals)})
        return row

    def diagnostics_row(self, state: MicroState, aggregator: NormAggregator) -> Dict[str, float]:
        C = state.C
        totals = C.sum(axis=1) * self.h ** 2
        sigma = (self.z ** 2) @ C
        row = {"t": state.t}
        row.update({f"total_{name}": float(total) for name, total in zip(self.names, totals)})
        row["en_drift"] = float(np.max(np.abs(self.z @ C)))
        row["c_min"] = float(C.min())
        row["c_max"] = float(C.max())
        row["sigma_min"] = float(sigma.min())
        norms = self.norms(state)
        row.update(norms)
        row.update(aggregator.update(state.t, norms))
        row["picard_iterations"] = float(state.picard_iterations)
        return row

    def average_fields(self, state: MicroState, epsilon_inv: Optional[int] = None) -> MacroFields:
        return average_fields(self.grid, state, epsilon_inv or self.grid.epsilon_inv)

    def _gauge(self, phi: np.ndarray) -> np.ndarray:
        """Zero mean of phi_E on every potential component that has E-cells"""
        phi = phi.copy()
        mask_E = self.grid.mask_E
        for c in range(self.components):
            members = self._labels == c
            reference = members & mask_E
            if not reference.any():
                reference = members
            phi[members] -= phi[reference].mean()
        return phi


def init_micro(
    grid: TaggedGrid,
    init: InitialData,
    params: PhysicalParams,
    run: RunConfig,
    bounds: Optional[ConcentrationBounds] = None,
) -> Tuple[MicroSolver, MicroState]:
    """Build the solver for a grid and sample the initial state onto it"""
    solver = MicroSolver(grid, params, run, bounds)
    return solver, solver.initial_state(init)


def step_micro(solver: MicroSolver, state: MicroState) -> MicroState:
    return solver.step(state)


def micro_diagnostics(solver: MicroSolver, history: Sequence[MicroState]) -> DiagnosticsRecord:
    """Diagnostics table of a sequence of states, in order"""
    if not history:
        raise ValueError("history must not be empty")
    record = DiagnosticsRecord(diagnostic_columns(solver.names))
    aggregator = NormAggregator()
    for state in history:
        record.append(solver.diagnostics_row(state, aggregator))
    return record


def average_fields(grid: TaggedGrid, state: MicroState, epsilon_inv: int) -> MacroFields:
    """
    Per epsilon-cell subdomain averages on an epsilon_inv x epsilon_inv grid

    Concentrations and potentials are averaged over the s-cells of each
    block; v over the interface faces of each block. Blocks without s-cells
    or without faces give NaN.
    """
    n = grid.n
    if n % epsilon_inv != 0:
        raise ValueError(f"grid resolution {n} is not divisible by {epsilon_inv}")
    w_I = grid.intracellular.astype(float)
    w_E = 1.0 - w_I
    species = state.C.shape[0]
    C = state.C.reshape(species, n, n)
    phi = state.phi.reshape(n, n)

    C_I = np.stack([block_average(C[i], w_I, epsilon_inv) for i in range(species)])
    C_E = np.stack([block_average(C[i], w_E, epsilon_inv) for i in range(species)])
    phi_I = block_average(phi, w_I, epsilon_inv)
    phi_E = block_average(phi, w_E, epsilon_inv)

    k = n // epsilon_inv
    ix, iy = np.divmod(grid.faces.inner, n)
    block = (ix // k) * epsilon_inv + (iy // k)
    counts = np.bincount(block, minlength=epsilon_inv ** 2).astype(float)
    sums = np.bincount(block, weights=state.v, minlength=epsilon_inv ** 2)
    with np.errstate(invalid="ignore", divide="ignore"):
        v = np.where(counts > 0, sums / np.where(counts > 0, counts, 1.0), np.nan)
    return MacroFields(
        t=state.t,
        C_I=C_I,
        C_E=C_E,
        phi_I=phi_I,
        phi_E=phi_E,
        v=v.reshape(epsilon_inv, epsilon_inv),
    )
