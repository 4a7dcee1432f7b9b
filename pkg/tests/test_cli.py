import json
import subprocess
import sys

import numpy as np
import pytest

from qgeom.cli import EXIT_ASSERT, EXIT_NUMERIC, EXIT_OK, EXIT_USAGE, run
from qgeom.config import ExperimentConfig, default_config
from qgeom.model import Dataset, Theta


@pytest.fixture
def ff_config(tmp_path):
    path = tmp_path / "ff.json"
    default_config("false-flatness").save(path)
    return path


def test_false_flatness_success(tmp_path, ff_config, capsys):
    out = tmp_path / "run"
    assert run(["false-flatness", "--config", str(ff_config), "--out", str(out)]) == EXIT_OK
    assert (out / "spectra.csv").exists() and (out / "summary.json").exists()
    assert "PASS" in capsys.readouterr().out


def test_overrides_are_recorded(tmp_path, ff_config):
    out = tmp_path / "run"
    assert run(["false-flatness", "--config", str(ff_config), "--out", str(out), "--set", "seed=3", "--set", "tol_block.spectra_tol=1e-7"]) == EXIT_OK
    cfg = ExperimentConfig.load(out / "config.json")
    assert cfg.seed == 3 and cfg.tol_block.spectra_tol == 1e-7


def test_assertion_failure_exits_one(tmp_path, ff_config):
    # without rescaling no representative can shift the Euclidean spectrum
    argv = ["false-flatness", "--config", str(ff_config), "--out", str(tmp_path / "run"), "--set", "scale_log_range=[0,0]"]
    assert run(argv) == EXIT_ASSERT
    summary = json.loads((tmp_path / "run" / "summary.json").read_text())
    assert summary["passed"] is False


def test_existing_run_dir_is_refused(tmp_path, ff_config, capsys):
    out = tmp_path / "run"
    out.mkdir()
    assert run(["false-flatness", "--config", str(ff_config), "--out", str(out)]) == EXIT_USAGE
    assert "already exists" in capsys.readouterr().err
    assert list(out.iterdir()) == []


def test_missing_config_names_the_path(tmp_path, capsys):
    missing = tmp_path / "nope.json"
    assert run(["false-flatness", "--config", str(missing), "--out", str(tmp_path / "run")]) == EXIT_USAGE
    assert str(missing) in capsys.readouterr().err


def test_bad_config_values_exit_two(tmp_path, ff_config):
    assert run(["false-flatness", "--config", str(ff_config), "--out", str(tmp_path / "a"), "--set", "bogus=1"]) == EXIT_USAGE
    assert run(["false-flatness", "--config", str(ff_config), "--out", str(tmp_path / "b"), "--set", "m=0"]) == EXIT_USAGE
    assert run(["false-flatness", "--config", str(ff_config), "--out", str(tmp_path / "c"), "--set", "noequals"]) == EXIT_USAGE
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert run(["false-flatness", "--config", str(bad), "--out", str(tmp_path / "d")]) == EXIT_USAGE


def test_divergent_training_exits_three(tmp_path, ff_config, capsys):
    out = tmp_path / "run"
    assert run(["false-flatness", "--config", str(ff_config), "--out", str(out), "--set", "lr=1e6"]) == EXIT_NUMERIC
    assert "numerical failure" in capsys.readouterr().err
    assert not out.exists()


def test_usage_errors_exit_two():
    assert run([]) == EXIT_USAGE
    assert run(["frobnicate"]) == EXIT_USAGE
    assert run(["false-flatness", "--out", "x"]) == EXIT_USAGE
    assert run(["check", "--only", "no_such_check"]) == EXIT_USAGE


def test_config_roundtrip(tmp_path):
    for name in ("false-flatness", "local-dynamics", "implicit-bias"):
        cfg = default_config(name)
        cfg.save(tmp_path / f"{name}.json")
        assert ExperimentConfig.load(tmp_path / f"{name}.json") == cfg


def test_check_passes(capsys):
    assert run(["check"]) == EXIT_OK
    assert "checks passed" in capsys.readouterr().out


def test_check_only(capsys):
    assert run(["check", "--only", "vech_isometry"]) == EXIT_OK
    assert "1/1 checks passed" in capsys.readouterr().out


def test_inspect_default_data(tmp_path, capsys):
    path = tmp_path / "theta.json"
    path.write_text(json.dumps(Theta([1.0], [[1.0, 0.0]]).to_dict()))
    assert run(["inspect", str(path)]) == EXIT_OK
    report = json.loads(capsys.readouterr().out)
    assert report["n"] == 3 + 5
    assert report["regularity"]["is_regular"] is True
    assert report["complexity"]["q_frobenius"] == pytest.approx(1.0)


def test_inspect_with_data(tmp_path, capsys):
    rng = np.random.default_rng(0)
    theta = Theta([1.0, -1.0], [[1.0, 0.0], [1.0, 0.0]])
    (tmp_path / "theta.json").write_text(json.dumps(theta.to_dict()))
    (tmp_path / "data.json").write_text(json.dumps(Dataset(rng.standard_normal((12, 2)), np.zeros(12)).to_dict()))
    assert run(["inspect", str(tmp_path / "theta.json"), "--data", str(tmp_path / "data.json")]) == EXIT_OK
    report = json.loads(capsys.readouterr().out)
    assert report["n"] == 12
    assert report["regularity"]["is_regular"] is False
    assert run(["inspect", str(tmp_path / "missing.json")]) == EXIT_USAGE


def test_console_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "qgeom.cli", "--version"], capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout.startswith("qgeom ")
