"""
Run directories and CSV artifacts

Every table goes through pandas with settings.CSV_FLOAT_FORMAT so that two
runs of the same configuration write identical bytes.
"""
import json
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from loguru import logger

from ionhom.core.config import settings
from ionhom.core.errors import IonHomError
from ionhom.models.config import SimulationConfig
from ionhom.models.reports import ConvergenceReport
from ionhom.models.state import MacroFields, MicroState, RunResult, TaggedGrid, cell_coordinates
from ionhom.services.diagnostics import AGGREGATE_COLUMNS, NORM_COLUMNS
from ionhom.utils.hashing import config_hash, file_hash

MANIFEST = "manifest.txt"
ERROR_RECORD = "error.json"


class RunDirectory:
    """Output directory of one run; remembers what it wrote for the manifest"""

    def __init__(self, path: Path):
        self.path = Path(path)
        self.path.mkdir(parents=True, exist_ok=True)
        self.artifacts: List[str] = []

    def _record(self, name: str) -> Path:
        if name not in self.artifacts:
            self.artifacts.append(name)
        return self.path / name

    def write_frame(self, frame: pd.DataFrame, name: str) -> Path:
        path = self._record(name)
        frame.to_csv(path, index=False, float_format=settings.CSV_FLOAT_FORMAT)
        logger.debug(f"Wrote {path} ({len(frame)} rows)")
        return path

    def write_raster(self, values: np.ndarray, name: str) -> Path:
        """(n, n) array as a headerless CSV, row ix holds cells (ix, 0..n-1)"""
        path = self._record(name)
        frame = pd.DataFrame(np.asarray(values))
        if np.issubdtype(frame.values.dtype, np.integer) or frame.values.dtype == bool:
            frame.astype(np.int8).to_csv(path, index=False, header=False)
        else:
            frame.to_csv(path, index=False, header=False, float_format=settings.CSV_FLOAT_FORMAT)
        return path

    def write_config(self, config: SimulationConfig) -> Path:
        path = self._record("config.txt")
        lines = [f"{key} = {value}" for key, value in config.to_flat().items()]
        path.write_text("\n".join(lines) + "\n")
        return path

    def write_error(self, error: Exception) -> Path:
        """error.json with the error class, message and details"""
        path = self._record(ERROR_RECORD)
        path.write_text(json.dumps(error_record(error), indent=2, sort_keys=True, default=str) + "\n")
        logger.error(f"Run failed, wrote {path}")
        return path

    def write_manifest(self, config: Optional[SimulationConfig] = None) -> Path:
        """manifest.txt: version, config hash and one line per artifact with its SHA-256"""
        path = self.path / MANIFEST
        lines = [f"app {settings.APP_NAME}", f"version {settings.VERSION}"]
        if config is not None:
            lines.append(f"config_hash {config_hash(config.to_flat())}")
        for name in self.artifacts:
            target = self.path / name
            if target.is_file():
                lines.append(f"artifact {name} {file_hash(target)}")
        path.write_text("\n".join(lines) + "\n")
        return path


def error_record(error: Exception) -> Dict[str, Any]:
    if isinstance(error, IonHomError):
        return error.to_record()
    details: Dict[str, Any] = {}
    if hasattr(error, "errors"):
        try:
            details["errors"] = [
                {"loc": list(e.get("loc", ())), "msg": e.get("msg", "")} for e in error.errors()
            ]
        except TypeError:
            pass
    return {"error": type(error).__name__, "message": str(error), "details": details}


def macro_fields_frame(fields: MacroFields, species_names: Sequence[str]) -> pd.DataFrame:
    """One row per macro cell: ix, iy, x, y, C_<sp>_I, C_<sp>_E, phi_I, phi_E, v"""
    m = fields.m
    x, y = cell_coordinates(m)
    ix, iy = np.meshgrid(np.arange(m), np.arange(m), indexing="ij")
    table = {"ix": ix.ravel(), "iy": iy.ravel(), "x": x.ravel(), "y": y.ravel()}
    for name, values in fields.named(species_names).items():
        if name != "v":
            table[name] = np.asarray(values).ravel()
    table["phi_I"] = np.asarray(fields.phi_I).ravel()
    table["phi_E"] = np.asarray(fields.phi_E).ravel()
    table["v"] = np.asarray(fields.v).ravel()
    return pd.DataFrame(table)


def micro_fields_frame(state: MicroState, grid: TaggedGrid, species_names: Sequence[str]) -> pd.DataFrame:
    """One row per micro cell: ix, iy, x, y, tag, C_<sp>, phi"""
    n = grid.n
    x, y = grid.centers()
    ix, iy = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    table = {
        "ix": ix.ravel(),
        "iy": iy.ravel(),
        "x": x.ravel(),
        "y": y.ravel(),
        "tag": np.where(grid.mask_I, "I", "E"),
    }
    for name, values in zip(species_names, state.C):
        table[f"C_{name}"] = values
    table["phi"] = state.phi
    return pd.DataFrame(table)


def interface_frame(state: MicroState, grid: TaggedGrid) -> pd.DataFrame:
    """One row per membrane face: inner and outer cell, normal axis and sign, v"""
    faces = grid.faces
    return pd.DataFrame({
        "inner": faces.inner,
        "outer": faces.outer,
        "axis": faces.axis,
        "sign": faces.sign,
        "v": state.v,
    })


def write_run_result(
    directory: RunDirectory,
    result: RunResult,
    fields_of,
    snapshot_name: str = "fields",
):
    """
    Diagnostics, conservation and the final/snapshot field tables of a run

    Args:
        directory: Target run directory
        result: Solver output
        fields_of: Callable turning a state into a DataFrame
        snapshot_name: Prefix of the field files
    """
    directory.write_frame(result.diagnostics.to_frame(), "diagnostics.csv")
    if result.conservation is not None:
        directory.write_frame(result.conservation, "conservation.csv")
    for step, state in sorted(result.snapshots.items()):
        directory.write_frame(fields_of(state), f"{snapshot_name}_step{step:06d}.csv")
    directory.write_frame(fields_of(result.final), f"{snapshot_name}_final.csv")
    logger.info(f"Run took {result.wall_clock:.2f}s of wall-clock time")


def emit_plot_data(report: ConvergenceReport, directory: RunDirectory) -> List[Path]:
    """
    Log-log ready tables of a convergence study

    Writes error_<field>.csv per tracked field with one row per epsilon:
    epsilon_inv, epsilon, then error_<fraction> and ratio_<fraction> per
    snapshot, the ratio being error(k+1)/error(k) against the previous row.
    norms.csv stacks the per-epsilon diagnostics in long form; it is written
    with its header only when no diagnostics exist.
    """
    paths = []
    for field_name in report.fields:
        table = report.table(field_name)
        frame = pd.DataFrame({"epsilon_inv": table.index.astype(int), "epsilon": 1.0 / table.index.astype(float)})
        for fraction in table.columns:
            errors = table[fraction].to_numpy(dtype=float)
            ratios = np.full(errors.shape, np.nan)
            with np.errstate(divide="ignore", invalid="ignore"):
                ratios[1:] = errors[1:] / errors[:-1]
            frame[f"error_{fraction:g}"] = errors
            frame[f"ratio_{fraction:g}"] = ratios
        paths.append(directory.write_frame(frame, f"error_{field_name}.csv"))

    columns = ["epsilon_inv", "t"] + NORM_COLUMNS + AGGREGATE_COLUMNS
    pieces = []
    for epsilon_inv in sorted(report.diagnostics):
        frame = report.diagnostics[epsilon_inv]
        piece = frame[[c for c in columns if c in frame.columns]].copy()
        piece.insert(0, "epsilon_inv", epsilon_inv)
        pieces.append(piece)
    norms = pd.concat(pieces, ignore_index=True) if pieces else pd.DataFrame(columns=columns)
    paths.append(directory.write_frame(norms[columns], "norms.csv"))
    return paths


def write_convergence(report: ConvergenceReport, directory: RunDirectory, config: SimulationConfig) -> Path:
    """errors.csv, failures.csv, the plot tables and the manifest of a study"""
    directory.write_config(config)
    directory.write_frame(report.errors, "errors.csv")
    failures = pd.DataFrame(
        [{"epsilon_inv": e, "reason": reason} for e, reason in sorted(report.failures.items())],
        columns=["epsilon_inv", "reason"],
    )
    directory.write_frame(failures, "failures.csv")
    emit_plot_data(report, directory)
    return directory.write_manifest(config)
