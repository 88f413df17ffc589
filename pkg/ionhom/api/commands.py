"""
Command-line surface

ionhom validate|cell-problem|micro|macro|converge|membrane, each taking
--config PATH (flat key = value file) and --out DIR. Failures write
error.json into the run directory and exit with status 1.
"""
import functools
from pathlib import Path
from typing import Dict, Optional, Sequence

import click
import numpy as np
from loguru import logger
from pydantic import ValidationError

from ionhom.core.config import parse_list, read_flat_config, settings
from ionhom.core.errors import IonHomError, ValidationFailedError
from ionhom.core.logging import setup_logging
from ionhom.models.config import RunMode, SimulationConfig
from ionhom.models.geometry import Connectivity
from ionhom.services.artifacts import RunDirectory, write_convergence
from ionhom.services.convergence import run_convergence_study
from ionhom.services.runner import run_membrane, run_single, run_validation
from ionhom.utils.hashing import config_hash


def parse_overrides(pairs: Sequence[str]) -> Dict[str, str]:
    """--set key=value pairs as a flat mapping"""
    values = {}
    for pair in pairs:
        key, sep, value = pair.partition("=")
        if not sep or not key.strip():
            raise click.BadParameter(f"expected key=value, got '{pair}'", param_hint="--set")
        values[key.strip()] = value.strip()
    return values


def resolve_config(path: Optional[Path], overrides: Sequence[str], extra: Optional[Dict[str, str]] = None) -> SimulationConfig:
    flat = read_flat_config(path) if path is not None else {}
    flat.update(parse_overrides(overrides))
    flat.update(extra or {})
    return SimulationConfig.from_flat(flat)


def default_out(label: str) -> Path:
    return Path(settings.OUTPUT_DIR) / label


def echo_config(config: SimulationConfig):
    flat = config.to_flat()
    for key, value in flat.items():
        click.echo(f"{key} = {value}")
    click.echo(f"config_hash = {config_hash(flat)}")


def run_options(func):
    """--config, --set and --out shared by every command"""
    func = click.option("--out", "out", type=click.Path(file_okay=False, path_type=Path), default=None,
                        help="Run directory (default: $IONHOM_OUTPUT_DIR/<command>)")(func)
    func = click.option("--set", "overrides", multiple=True, metavar="KEY=VALUE",
                        help="Override one configuration key; repeatable")(func)
    func = click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False, path_type=Path),
                        default=None, help="Flat key = value configuration file")(func)
    return func


def handle_errors(command: str):
    """Turn solver and configuration failures into error.json plus exit status 1"""

    def decorator(func):
        @functools.wraps(func)
        def wrapper(*args, **kwargs):
            out = kwargs.get("out") or default_out(command)
            kwargs["out"] = out
            try:
                return func(*args, **kwargs)
            except (IonHomError, ValidationError, ValueError, FileNotFoundError) as e:
                logger.error(f"{command} failed: {e}")
                directory = RunDirectory(out)
                directory.write_error(e)
                directory.write_manifest()
                click.echo(f"error: {type(e).__name__}: {e}", err=True)
                raise click.exceptions.Exit(1)

        return wrapper

    return decorator


@click.group()
@click.option("--log-level", default=None, help="Console log level (default: $IONHOM_LOG_LEVEL)")
@click.option("--no-log-file", is_flag=True, default=False, help="Skip the rotating log file")
@click.version_option(settings.VERSION, prog_name=settings.APP_NAME)
def cli(log_level: Optional[str], no_log_file: bool):
    """Ionic electrodiffusion homogenization: micro and macro solvers and their comparison"""
    setup_logging(level=log_level, to_file=not no_log_file)


@cli.command()
@run_options
@handle_errors("validate")
def validate(config_path: Optional[Path], overrides: Sequence[str], out: Path):
    """Check the configured data against the standing assumptions"""
    config = resolve_config(config_path, overrides)
    echo_config(config)
    report = run_validation(config, RunDirectory(out))
    for check in report.checks:
        click.echo(f"{'PASS' if check.passed else 'FAIL'} {check.name}: {check.message}")
    if not report.passed:
        raise ValidationFailedError("initial data violates the standing assumptions", report)
    click.echo(str(out))


@cli.command("cell-problem")
@run_options
@handle_errors("cell-problem")
def cell_problem(config_path: Optional[Path], overrides: Sequence[str], out: Path):
    """Solve the corrector problems and write the effective tensors"""
    config = resolve_config(config_path, overrides, {"run.mode": RunMode.CELL_PROBLEM.value})
    echo_config(config)
    run_single(config, out)
    click.echo(str(out))


@cli.command()
@run_options
@handle_errors("micro")
def micro(config_path: Optional[Path], overrides: Sequence[str], out: Path):
    """Run the microscale model on the epsilon-tiled domain"""
    config = resolve_config(config_path, overrides, {"run.mode": RunMode.MICRO.value})
    echo_config(config)
    run_single(config, out)
    click.echo(str(out))


@cli.command()
@click.option("--model", type=click.Choice([c.value for c in Connectivity]), default=None,
              help="Homogenized model (default: run.connectivity)")
@run_options
@handle_errors("macro")
def macro(model: Optional[str], config_path: Optional[Path], overrides: Sequence[str], out: Path):
    """Run a homogenized model on the macro grid"""
    extra = {"run.mode": RunMode.MACRO.value}
    if model:
        extra["run.connectivity"] = model
    config = resolve_config(config_path, overrides, extra)
    echo_config(config)
    run_single(config, out)
    click.echo(str(out))


@cli.command()
@click.option("--epsilons", default=None, help="Comma separated 1/epsilon values, e.g. 2,4,8")
@click.option("--workers", type=click.IntRange(min=1), default=1, show_default=True, help="Concurrent micro legs")
@run_options
@handle_errors("converge")
def converge(
    epsilons: Optional[str], workers: int, config_path: Optional[Path], overrides: Sequence[str], out: Path
):
    """Compare epsilon-averaged micro runs with the macro run"""
    config = resolve_config(config_path, overrides)
    echo_config(config)
    epsilon_invs = [int(e) for e in parse_list(epsilons)] if epsilons else None
    report = run_convergence_study(config, epsilon_invs, out=out, workers=workers)
    write_convergence(report, RunDirectory(out), config)
    for e, reason in sorted(report.failures.items()):
        click.echo(f"leg 1/{e} failed: {reason}", err=True)
    click.echo(str(out))
    if not report.succeeded:
        raise click.exceptions.Exit(1)


@cli.command()
@click.option("--probe", is_flag=True, default=False, help="Tabulate currents over a v-grid")
@click.option("--v-min", type=float, default=-3.0, show_default=True)
@click.option("--v-max", type=float, default=3.0, show_default=True)
@click.option("--points", type=click.IntRange(min=2), default=121, show_default=True)
@run_options
@handle_errors("membrane")
def membrane(
    probe: bool, v_min: float, v_max: float, points: int,
    config_path: Optional[Path], overrides: Sequence[str], out: Path,
):
    """Resting potential and, with --probe, the membrane current table"""
    config = resolve_config(config_path, overrides)
    echo_config(config)
    v_grid = np.linspace(v_min, v_max, points) if probe else None
    v_rest = run_membrane(config, RunDirectory(out), v_grid)
    click.echo(f"resting_potential = {v_rest!r}")
    click.echo(str(out))
