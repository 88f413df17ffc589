"""Runtime norms, running aggregates, the bound monitor and the shared time loop"""
from typing import Dict, List, Sequence

import numpy as np
import pandas as pd
from loguru import logger

from ionhom.core.errors import PositivityLossError
from ionhom.models.params import ConcentrationBounds
from ionhom.models.reports import DiagnosticsRecord
from ionhom.models.state import RunResult
from ionhom.utils.time import Stopwatch, format_duration

# instantaneous norm -> how it is aggregated in time
AGGREGATES = {
    "c_l2": ("c_linf_l2", "max"),
    "grad_c": ("grad_c_l2l2", "l2"),
    "trace_c": ("trace_c_l2l2", "l2"),
    "trace_v": ("trace_v_l2l2", "l2"),
    "phi_h1": ("phi_l2h1", "l2"),
}

NORM_COLUMNS = list(AGGREGATES)
AGGREGATE_COLUMNS = [name for name, _ in AGGREGATES.values()]


def diagnostic_columns(species_names: Sequence[str]) -> List[str]:
    """Column order of every diagnostics table"""
    return (
        ["t"]
        + [f"total_{name}" for name in species_names]
        + ["en_drift", "c_min", "c_max", "sigma_min"]
        + NORM_COLUMNS
        + AGGREGATE_COLUMNS
        + ["picard_iterations"]
    )


class NormAggregator:
    """
    Running L-infinity maxima and L2-in-time integrals of the norm series

    The time integral uses the value at the new time level times the step,
    matching the backward-Euler scheme.
    """

    def __init__(self):
        self._max: Dict[str, float] = {}
        self._sq: Dict[str, float] = {}
        self.t = None

    def update(self, t: float, norms: Dict[str, float]) -> Dict[str, float]:
        dt = 0.0 if self.t is None else t - self.t
        self.t = t
        out = {}
        for key, (name, kind) in AGGREGATES.items():
            value = float(norms[key])
            if kind == "max":
                self._max[name] = max(self._max.get(name, 0.0), value)
                out[name] = self._max[name]
            else:
                self._sq[name] = self._sq.get(name, 0.0) + dt * value * value
                out[name] = float(np.sqrt(self._sq[name]))
        return out


class BoundMonitor:
    """Compares a run against (C_d, C_u, C_l) and logs the first violation of each bound"""

    def __init__(self, bounds: ConcentrationBounds):
        self.bounds = bounds
        self.violations: Dict[str, int] = {"C_d": 0, "C_u": 0, "C_l": 0}

    def check(self, t: float, c_min: float, c_max: float, sigma_min: float):
        found = {
            "C_d": c_min < self.bounds.C_d,
            "C_u": c_max > self.bounds.C_u,
            "C_l": sigma_min < self.bounds.C_l,
        }
        values = {"C_d": c_min, "C_u": c_max, "C_l": sigma_min}
        for key, violated in found.items():
            if not violated:
                continue
            if self.violations[key] == 0:
                logger.warning(
                    f"Bound {key}={getattr(self.bounds, key):g} violated at t={t:.6g} (value {values[key]:.6g})"
                )
            self.violations[key] += 1


def check_positive(C: np.ndarray, t: float, species_names: Sequence[str], where: str = "cell"):
    """
    Raise PositivityLossError if any concentration is nonpositive

    Args:
        C: Array of shape (species, ...)
        t: Time of the state
        species_names: Labels for the error record
        where: Name of the location index in the error record
    """
    flat = C.reshape(C.shape[0], -1)
    bad = ~(flat > 0.0)
    if not bad.any():
        return
    species, location = np.unravel_index(int(np.argmax(bad)), bad.shape)
    value = float(flat[species, location])
    logger.error(f"Concentration of {species_names[species]} became {value!r} at t={t:.6g}, {where} {location}")
    raise PositivityLossError(
        f"nonpositive {species_names[species]} concentration at t={t:.6g}",
        {"t": t, "species": species_names[species], where: int(location), "value": value},
    )


def conservation_frame(rows: List[Dict[str, float]], species_names: Sequence[str]) -> pd.DataFrame:
    """
    Species totals over time with their drift relative to the first row

    Every row carries t and total_<species>; extra columns (per-compartment
    totals) are kept in order.
    """
    frame = pd.DataFrame(rows)
    if frame.empty:
        return pd.DataFrame(columns=["t"] + [f"total_{n}" for n in species_names])
    for name in species_names:
        total = frame[f"total_{name}"].to_numpy()
        scale = abs(total[0]) if total[0] != 0.0 else 1.0
        frame[f"drift_{name}"] = (total - total[0]) / scale
    return frame


def run_steps(solver, state, n_steps: int, snapshot_steps: Sequence[int] = (), label: str = "run") -> RunResult:
    """
    Advance a solver n_steps, recording diagnostics, conservation and snapshots

    Args:
        solver: Object with names, monitor, step(state), diagnostics_row(state, aggregator)
            and conservation_row(state)
        state: Initial state
        n_steps: Number of time steps
        snapshot_steps: Step indices whose states are kept (0 is the initial state)
        label: Name used in log messages

    Returns:
        RunResult
    """
    wanted = set(snapshot_steps)
    record = DiagnosticsRecord(diagnostic_columns(solver.names))
    aggregator = NormAggregator()
    conservation = [solver.conservation_row(state)]
    snapshots = {}
    watch = Stopwatch()

    record.append(solver.diagnostics_row(state, aggregator), 0.0)
    if 0 in wanted:
        snapshots[0] = state.copy()
    for _ in range(n_steps):
        state = solver.step(state)
        row = solver.diagnostics_row(state, aggregator)
        solver.monitor.check(state.t, row["c_min"], row["c_max"], row["sigma_min"])
        record.append(row, watch.lap())
        conservation.append(solver.conservation_row(state))
        if state.step in wanted:
            snapshots[state.step] = state.copy()
        logger.debug(
            f"{label} step {state.step}: t={state.t:.6g}, picard={state.picard_iterations}, en={row['en_drift']:.2e}"
        )

    logger.info(f"{label} finished: {n_steps} steps in {format_duration(watch.elapsed)}")
    return RunResult(
        final=state,
        diagnostics=record,
        snapshots=snapshots,
        wall_clock=watch.elapsed,
        conservation=conservation_frame(conservation, solver.names),
    )
