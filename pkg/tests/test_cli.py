import json
import subprocess
import sys

import pytest

from filaments.cli import SCHEMA, ConfigError, resolve_config, run


def write_cfg(path, text):
    path.write_text(text)
    return str(path)


@pytest.mark.trivial
def test_zero_kernel_simulate_snapshots_identical(tmp_path):
    cfg = write_cfg(tmp_path / "c.toml", 'kernel = "zero"\nT = 0.5\ndt = 0.05\nN = 3\nM = 16\n')
    assert run(["simulate", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
    snap = tmp_path / "o" / "snapshots"
    assert (snap / "step_000000.csv").read_bytes() == (snap / "step_000010.csv").read_bytes()
    manifest = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert manifest["subcommand"] == "simulate" and manifest["config"]["kernel"] == "zero"
    assert "build" in manifest and set(SCHEMA) <= set(manifest["config"])


def test_check_kernel_passes(tmp_path, capsys):
    cfg = write_cfg(tmp_path / "c.toml", 'kernel = "mollified_biot_savart"\ndelta = 0.5\n')
    assert run(["check-kernel", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
    out = capsys.readouterr().out
    assert "C_B" in out


@pytest.mark.trivial
def test_missing_key_exit_one(tmp_path, capsys):
    cfg = write_cfg(tmp_path / "c.toml", 'kernel = "zero"\nT = 0.5\n')
    assert run(["simulate", "--config", cfg, "--out", str(tmp_path / "o")]) == 1
    err = capsys.readouterr().err.strip()
    assert err.startswith("filaments-error code=1 kind=missing_key") and "dt" in err
    assert len(err.splitlines()) == 1


@pytest.mark.parametrize("raw, kind", [
    ({"kernel": "zero", "T": 1.0, "dt": 0.1, "bogus": 1}, "unknown_key"),
    ({"kernel": "zero", "T": 1.0, "dt": 0.3}, "invalid_value"),
    ({"kernel": "zero", "T": 1.0, "dt": "0.1"}, "bad_type"),
    ({"kernel": "zero", "T": 1.0, "dt": 0.1, "M": 0}, "invalid_value"),
])
def test_config_validation(raw, kind):
    with pytest.raises(ConfigError) as err:
        resolve_config(raw, "simulate")
    assert err.value.kind == kind


def test_unknown_kernel_exit_one(tmp_path, capsys):
    cfg = write_cfg(tmp_path / "c.toml", 'kernel = "magic"\nT = 0.1\ndt = 0.05\n')
    assert run(["simulate", "--config", cfg, "--out", str(tmp_path / "o")]) == 1
    assert "code=1" in capsys.readouterr().err


def test_non_contraction_exit_three(tmp_path, capsys):
    cfg = write_cfg(tmp_path / "c.toml", 'kernel = "mollified_biot_savart"\nT = 0.1\ndt = 0.05\n'
                    'window = 0.1\nmax_iter = 1\nM = 16\ntol = 1e-12\n')
    assert run(["picard", "--config", cfg, "--out", str(tmp_path / "o")]) == 3
    assert "kind=non_contraction" in capsys.readouterr().err


def test_replay_reproduces(tmp_path):
    cfg = write_cfg(tmp_path / "c.toml", 'kernel = "mollified_biot_savart"\nT = 0.2\ndt = 0.05\nM = 16\n'
                    'geometry = "law"\nN = 2\nseed = 4\n')
    assert run(["simulate", "--config", cfg, "--out", str(tmp_path / "a")]) == 0
    assert run(["--replay", str(tmp_path / "a" / "manifest.json"), "--out", str(tmp_path / "b")]) == 0
    for name in ("report.json", "report.csv", "snapshots/step_000004.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_thread_count_does_not_change_reports(tmp_path):
    cfg = write_cfg(tmp_path / "c.toml", 'kernel = "mollified_biot_savart"\nT = 0.2\ndt = 0.05\nM = 16\n'
                    'N = 4\ntrack_jacobians = true\n')
    for t in (1, 8):
        assert run(["simulate", "--config", cfg, "--threads", str(t), "--out", str(tmp_path / f"t{t}")]) == 0
    for name in ("report.json", "report.csv", "trace.csv", "snapshots/step_000004.csv"):
        assert (tmp_path / "t1" / name).read_bytes() == (tmp_path / "t8" / name).read_bytes()


def test_family_file_geometry(tmp_path):
    from filaments.io import read_family, write_family
    from conftest import rings

    fam = rings([(0, 0, 0), (0.2, 0.1, 0.5)], [1.0, 0.6], M=16)
    write_family(tmp_path / "fam.csv", fam)
    assert (read_family(tmp_path / "fam.csv").points == fam.points).all()
    cfg = write_cfg(tmp_path / "c.toml", f'kernel = "zero"\nT = 0.1\ndt = 0.05\ngeometry = "file"\n'
                    f'geometry_file = "{tmp_path / "fam.csv"}"\n')
    assert run(["simulate", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
    assert (read_family(tmp_path / "o" / "snapshots" / "step_000002.csv").points == fam.points).all()


@pytest.mark.parametrize("sub, extra", [
    ("verify-pde", ""),
    ("meanfield", "Ns = [2, 4]\ntrials = 2\nN_ref = 16\n"),
    ("contdep", "N = 2\n"),
    ("chaos", "Ns = [2, 4]\ntrials = 2\nN_ref = 16\n"),
])
def test_study_subcommands_write_reports(tmp_path, sub, extra):
    cfg = write_cfg(tmp_path / "c.toml", f'kernel = "mollified_biot_savart"\nT = 0.1\ndt = 0.05\nM = 16\n{extra}')
    assert run([sub, "--config", cfg, "--out", str(tmp_path / "o")]) == 0
    assert json.loads((tmp_path / "o" / "report.json").read_text())
    assert (tmp_path / "o" / "report.csv").exists()


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "filaments", "simulate", "--out", str(tmp_path)],
                          capture_output=True, text=True)
    assert proc.returncode == 1 and "--config" in proc.stderr
