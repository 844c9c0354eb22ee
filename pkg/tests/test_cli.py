import os
import subprocess
import sys

import numpy as np
import pytest

from yoctoforce import cli, config, report
from yoctoforce.config import ConfigError


def write(tmp_path, text, name="run.ini"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


SMALL = """
[sweep]
grid = 0.5, 2.0
phase_cooperativities = 2.0
spectrum_cooperativities = 2.0
[synthesis]
n_reps = 40
"""


def test_defaults_are_the_reference_setup():
    cfg = config.load()
    osc = cfg.oscillator()
    assert osc.omega_m == pytest.approx(2 * np.pi * 110e3)
    assert osc.gamma == pytest.approx(2 * np.pi * 3e3)
    assert cfg.measurement().epsilon_eff == pytest.approx(0.055)
    grid = cfg.sweep_grid()
    assert grid.size == 16 and grid[0] == pytest.approx(0.1) and grid[-1] == pytest.approx(20)
    assert cfg["synthesis"]["n_reps"] == 150


@pytest.mark.parametrize("text, field", [
    ("[oscillator]\nlinewidth = 0\n", "oscillator.linewidth"),
    ("[measurement]\nepsilon_det = 1.5\n", "measurement.epsilon_det"),
    ("[measurement]\ncooperativity = -1\n", "measurement.cooperativity"),
    ("[drive]\nmod_index = abc\n", "drive.mod_index"),
    ("[drive]\nbogus = 1\n", "drive.bogus"),
    ("[bogus]\nx = 1\n", "bogus"),
    ("[ladder]\nlevel_fractions = 0.5, 0.5\n", "ladder.level_fractions"),
    ("[synthesis]\nn_reps = 2.5\n", "synthesis.n_reps"),
    ("[output]\nformats = csv, xml\n", "output.formats"),
    ("oscillator = 3\n", "oscillator"),
    ("[measurement\n", "malformed"),
])
def test_invalid_config_names_field(tmp_path, text, field):
    with pytest.raises(ConfigError, match=field.replace(".", r"\.")):
        config.load(write(tmp_path, text))


def test_flat_and_sectioned_forms_agree(tmp_path):
    a = config.load(write(tmp_path, "oscillator.nu = 0.5\nmeasurement.cooperativity = 3\n", "a.ini"))
    b = config.load(write(tmp_path, "[oscillator]\nnu = 0.5\n[measurement]\ncooperativity = 3\n", "b.ini"))
    assert a.as_dict() == b.as_dict()
    assert a.config_hash == b.config_hash


def test_dump_roundtrip(tmp_path):
    cfg = config.load(write(tmp_path, "[drive]\ndrive_phase = 0.3\n"), seed=9)
    again = config.load(write(tmp_path, config.dump_ini(cfg), "dump.ini"))
    assert again.as_dict() == cfg.as_dict()


def test_seed_precedence(tmp_path, monkeypatch):
    path = write(tmp_path, "[synthesis]\nseed = 5\n")
    monkeypatch.setenv("YF_SEED", "3")
    assert config.load(path, seed=7).seed == 7
    assert config.load(path).seed == 5
    assert config.load().seed == 3
    monkeypatch.setenv("YF_SEED", "x")
    with pytest.raises(ConfigError, match="YF_SEED"):
        config.load()


def test_config_hash_tracks_content():
    assert config.load().config_hash != config.load(seed=1).config_hash
    assert config.load(seed=1).config_hash == config.load(seed=1).config_hash


def test_point_seeds_are_distinct():
    cfg = config.load()
    seeds = {cfg.point_seed(i, p) for i in range(16) for p in range(4)}
    assert len(seeds) == 64


def test_theory_outputs(tmp_path):
    assert cli.main(["theory", "--out", str(tmp_path)]) == 0
    meta, cols, rows = report.read_csv(tmp_path / "theory.csv")
    assert meta["schema"] == report.SCHEMA_VERSION and meta["seed"] == "0" and meta["config_hash"]
    data = np.array(rows, dtype=float)
    c = data[:, 0]
    col = {name: data[:, i] for i, name in enumerate(cols)}
    i_ideal = np.argmin(col["ideal_total"])
    assert c[i_ideal] == pytest.approx(0.5, rel=0.05)
    assert col["ideal_total"][i_ideal] == pytest.approx(2.0, rel=1e-3)
    assert c[np.argmin(col["corrected_total"])] == pytest.approx(2.13, rel=0.05)
    parts = col["corrected_shot"] + col["corrected_back_action"] + col["corrected_zero_point"]
    assert np.allclose(parts, col["corrected_total"], rtol=1e-10)
    assert (tmp_path / "theory.svg").exists()
    assert (tmp_path / "theory.json").exists()


def test_numbers_have_twelve_significant_digits():
    assert report.fmt(1 / 3) == "0.333333333333"
    assert report.fmt(2 * np.pi * 1e5) == "628318.530718"
    assert report.fmt(True) == "true" and report.fmt(None) == ""


def test_sweep_is_bit_reproducible(tmp_path):
    ini = write(tmp_path, SMALL)
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.main(["sweep", "--config", ini, "--seed", "4", "--out", str(a)]) == 0
    assert cli.main(["sweep", "--config", ini, "--seed", "4", "--out", str(b)]) == 0
    for name in ("sweep.csv", "sweep.json", "fit_example.csv", "sweep.svg"):
        assert (a / name).read_bytes() == (b / name).read_bytes(), name
    c = tmp_path / "c"
    cli.main(["sweep", "--config", ini, "--seed", "5", "--out", str(c), "--no-plots"])
    assert (a / "sweep.csv").read_bytes() != (c / "sweep.csv").read_bytes()
    assert not (c / "sweep.svg").exists()


def test_single_point_sweep(tmp_path):
    ini = write(tmp_path, "[sweep]\ngrid = 2.0\n[synthesis]\nn_reps = 40\n")
    assert cli.main(["sweep", "--config", ini, "--out", str(tmp_path), "--no-plots"]) == 0
    meta, cols, rows = report.read_csv(tmp_path / "sweep.csv")
    assert meta["command"] == "sweep"
    assert len(rows) == 1 and cols == cli.SWEEP_COLUMNS
    assert rows[0][cols.index("converged")] == "true"


def test_sweep_records_failures_and_exits_nonzero(tmp_path, monkeypatch):
    real = cli.pipeline.run_point
    calls = []

    def flaky(cfg, **kw):
        calls.append(1)
        if len(calls) == 1:
            raise cli.NoResonanceError("no resonance detected")
        return real(cfg, **kw)

    monkeypatch.setattr(cli.pipeline, "run_point", flaky)
    ini = write(tmp_path, SMALL)
    assert cli.main(["sweep", "--config", ini, "--out", str(tmp_path), "--no-plots"]) == 1
    _, cols, rows = report.read_csv(tmp_path / "sweep.csv")
    assert len(rows) == 2
    assert "NoResonanceError" in rows[0][cols.index("error")]
    assert rows[1][cols.index("s_ff_over_sql")] != ""


def test_phase_outputs(tmp_path):
    ini = write(tmp_path, SMALL + "[output]\nformats = csv, json, reps\n")
    assert cli.main(["phase", "--config", ini, "--out", str(tmp_path)]) == 0
    _, cols, rows = report.read_csv(tmp_path / "phase_space.csv")
    assert len(rows) == 1
    _, _, pts = report.read_csv(tmp_path / "phase_points.csv")
    assert len(pts) == 40
    _, _, reps = report.read_csv(tmp_path / "reps_c2.csv")
    assert len(reps) % 40 == 0
    import json
    rep = json.loads((tmp_path / "phase.json").read_text())
    assert set(rep) >= {"config", "fits", "sensitivity", "phase_space", "validation", "schema"}
    for name in ("phase_space.svg", "sensitivity_spectra.svg", "sensitivity_spectra.csv"):
        assert (tmp_path / name).exists()


def test_validate_passes_on_defaults(tmp_path, capsys):
    assert cli.main(["validate", "--out", str(tmp_path), "--no-plots"]) == 0
    out = capsys.readouterr().out
    assert "FAIL" not in out and "checks passed" in out


def test_bad_config_exit_code(tmp_path, capsys):
    ini = write(tmp_path, "[oscillator]\nlinewidth = 0\n")
    assert cli.main(["validate", "--config", ini, "--out", str(tmp_path)]) == 2
    assert "oscillator.linewidth" in capsys.readouterr().err


def test_unwritable_output_directory(tmp_path, capsys):
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert cli.main(["theory", "--out", str(blocker / "sub")]) == 2
    assert "output directory" in capsys.readouterr().err


def test_module_entry_point(tmp_path):
    env = dict(os.environ, YF_SEED="2")
    res = subprocess.run([sys.executable, "-m", "yoctoforce", "theory", "--out", str(tmp_path), "--no-plots"],
                         capture_output=True, text=True, env=env)
    assert res.returncode == 0, res.stderr
    assert "optimal_cooperativity" in res.stdout
    meta, _, _ = report.read_csv(tmp_path / "theory.csv")
    assert meta["seed"] == "2"
