"""Tests for the command-line surface"""
import json
import sys

import pandas as pd
import pytest
from click.testing import CliRunner
from loguru import logger

from ionhom.api.commands import cli, parse_overrides
from ionhom.core.config import settings
from ionhom.services.artifacts import ERROR_RECORD, MANIFEST


@pytest.fixture
def runner():
    """Fixture for a click runner that restores the console sink afterwards"""
    yield CliRunner()
    logger.remove()
    logger.add(sys.stderr, level="WARNING")


@pytest.fixture
def small_args(small_flat):
    """Fixture for --set options that keep runs short"""
    args = []
    for key, value in small_flat.items():
        args += ["--set", f"{key}={value}"]
    return args


def invoke(runner, *args):
    return runner.invoke(cli, ["--no-log-file", "--log-level", "WARNING", *args])


def test_version(runner):
    """Test the version option"""
    result = runner.invoke(cli, ["--version"])

    assert result.exit_code == 0
    assert settings.VERSION in result.output


def test_parse_overrides():
    """Test key=value parsing"""
    assert parse_overrides(["run.dt = 0.01", "geometry.shape=stripe"]) == {
        "run.dt": "0.01",
        "geometry.shape": "stripe",
    }


def test_validate(runner, tmp_path):
    """Test that the default data validates and the table is written"""
    result = invoke(runner, "validate", "--out", str(tmp_path))

    assert result.exit_code == 0, result.output
    assert "PASS electroneutrality_I" in result.output
    assert "config_hash = " in result.output
    table = pd.read_csv(tmp_path / "validation.csv")
    assert table["passed"].all()
    assert (tmp_path / MANIFEST).is_file()


def test_validate_failure(runner, tmp_path):
    """Test that a charged compartment fails with an error record"""
    result = invoke(runner, "validate", "--set", "init.C_I.Cl=100", "--out", str(tmp_path))

    assert result.exit_code == 1
    assert "FAIL electroneutrality_I" in result.output
    record = json.loads((tmp_path / ERROR_RECORD).read_text())
    assert record["error"] == "ValidationFailedError"
    assert record["details"]["failed"] == ["electroneutrality_I"]


@pytest.mark.parametrize(
    "override, expected",
    [
        ("run.epsilon=0.3", "ValueError"),
        ("physics.nonsense=1", "ValueError"),
        ("geometry.a=0.3", "ResolutionMismatchError"),
    ],
)
def test_bad_configuration(runner, tmp_path, small_args, override, expected):
    """Test that configuration errors exit with status 1 and an error record"""
    result = invoke(runner, "micro", *small_args, "--set", override, "--out", str(tmp_path))

    assert result.exit_code == 1, result.output
    record = json.loads((tmp_path / ERROR_RECORD).read_text())
    assert record["error"] == expected
    assert (tmp_path / MANIFEST).is_file()


def test_malformed_override(runner, tmp_path):
    """Test that an override without '=' is a usage error"""
    result = invoke(runner, "validate", "--set", "run.dt", "--out", str(tmp_path))

    assert result.exit_code == 2


def test_missing_config_file(runner, tmp_path):
    """Test that a missing configuration file is a usage error"""
    result = invoke(runner, "micro", "--config", str(tmp_path / "absent.cfg"), "--out", str(tmp_path))

    assert result.exit_code == 2


def test_config_key_without_value(runner, tmp_path):
    """Test that a bare key in a configuration file fails with ConfigError in error.json"""
    path = tmp_path / "run.cfg"
    path.write_text("run.dt = 0.001\nphysics.P_m\n")
    out = tmp_path / "out"
    result = invoke(runner, "validate", "--config", str(path), "--out", str(out))

    assert result.exit_code == 1
    record = json.loads((out / ERROR_RECORD).read_text())
    assert record["error"] == "ConfigError"
    assert record["details"]["keys"] == ["physics.P_m"]


def test_config_file(runner, tmp_path, small_flat):
    """Test running from a configuration file"""
    path = tmp_path / "run.cfg"
    path.write_text("".join(f"{key} = {value}\n" for key, value in small_flat.items()))
    out = tmp_path / "out"
    result = invoke(runner, "micro", "--config", str(path), "--out", str(out))

    assert result.exit_code == 0, result.output
    assert "run.epsilon_inv = 2" in result.output
    assert (out / "diagnostics.csv").is_file()


def test_cell_problem(runner, tmp_path):
    """Test the tensor and corrector outputs"""
    result = invoke(runner, "cell-problem", "--set", "run.cell_resolution=16", "--out", str(tmp_path))

    assert result.exit_code == 0, result.output
    tensors = pd.read_csv(tmp_path / "tensors.csv")
    assert len(tensors) == 8
    assert (tensors["symmetry_error"] <= 1e-10).all()
    geometry = pd.read_csv(tmp_path / "geometry.csv", header=None)
    assert geometry.shape == (16, 16)
    assert (tmp_path / "corrector_E_0.csv").is_file()
    assert (tmp_path / "corrector_I_1.csv").is_file()


def test_micro(runner, tmp_path, small_args):
    """Test the micro run outputs"""
    result = invoke(runner, "micro", *small_args, "--out", str(tmp_path))

    assert result.exit_code == 0, result.output
    diagnostics = pd.read_csv(tmp_path / "diagnostics.csv")
    assert len(diagnostics) == 5
    assert diagnostics["en_drift"].max() <= 1e-10
    for name in ("conservation.csv", "fields_final.csv", "fields_step000002.csv", "interface_final.csv",
                 "averaged_final.csv", "geometry.csv", "config.txt"):
        assert (tmp_path / name).is_file(), f"{name} was not written"
    manifest = (tmp_path / MANIFEST).read_text()
    assert "artifact diagnostics.csv " in manifest
    assert "config_hash " in manifest


@pytest.mark.parametrize("model, geometry", [("con_discon", "centered_square"), ("con_con", "cross_channel")])
def test_macro(runner, tmp_path, small_args, model, geometry):
    """Test both homogenized models from the command line"""
    result = invoke(
        runner, "macro", "--model", model, *small_args,
        "--set", f"geometry.shape={geometry}", "--set", "run.macro_resolution=4", "--out", str(tmp_path),
    )

    assert result.exit_code == 0, result.output
    fields = pd.read_csv(tmp_path / "fields_final.csv")
    assert len(fields) == 16
    assert {"C_Na_I", "C_Cl_E", "phi_I", "phi_E", "v"} <= set(fields.columns)
    assert (tmp_path / "tensors.csv").is_file()
    conservation = pd.read_csv(tmp_path / "conservation.csv")
    assert conservation["drift_Na"].abs().max() <= 1e-10


def test_macro_singular_stripe(runner, tmp_path, small_args):
    """Test that the stripe has no connected-connected solution"""
    result = invoke(
        runner, "macro", "--model", "con_con", *small_args,
        "--set", "geometry.shape=stripe", "--out", str(tmp_path),
    )

    assert result.exit_code == 1
    record = json.loads((tmp_path / ERROR_RECORD).read_text())
    assert record["error"] == "SingularSystemError"


def test_membrane_probe(runner, tmp_path):
    """Test the resting potential and the current table"""
    result = invoke(runner, "membrane", "--probe", "--out", str(tmp_path))

    assert result.exit_code == 0, result.output
    assert "resting_potential = " in result.output
    table = pd.read_csv(tmp_path / "membrane_probe.csv")
    assert len(table) == 121
    assert table["v"].iloc[0] == pytest.approx(-3.0)


def test_membrane_without_probe(runner, tmp_path):
    """Test that the probe table is optional"""
    result = invoke(runner, "membrane", "--out", str(tmp_path))

    assert result.exit_code == 0, result.output
    assert not (tmp_path / "membrane_probe.csv").exists()


def test_converge(runner, tmp_path, small_args):
    """Test a two-leg convergence study"""
    result = invoke(runner, "converge", "--epsilons", "1,2", "--workers", "2", *small_args, "--out", str(tmp_path))

    assert result.exit_code == 0, result.output
    errors = pd.read_csv(tmp_path / "errors.csv")
    assert set(errors["epsilon_inv"]) == {1, 2}
    assert set(errors["fraction"]) == {0.5, 1.0}
    table = pd.read_csv(tmp_path / "error_v.csv")
    assert list(table.columns) == ["epsilon_inv", "epsilon", "error_0.5", "ratio_0.5", "error_1", "ratio_1"]
    assert pd.read_csv(tmp_path / "failures.csv").empty
    assert (tmp_path / "eps_1" / "diagnostics.csv").is_file()
    assert (tmp_path / "macro" / MANIFEST).is_file()
