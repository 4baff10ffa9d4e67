import subprocess
import sys
from pathlib import Path

import pytest

from delayed_choice.cli import main
from delayed_choice.config import load_config

SMALL = """[experiment]
mode = delayed_choice
seed = 42
n_triggers = 300000
block_size = 65536
[source]
p_emit = 0.01
mu_bg = 0.001
"""

SWEEP = """[experiment]
mode = delayed_choice
seed = 5
block_size = 65536
[sweep]
points = 8
triggers_per_point = 100000
[source]
p_emit = 0.02
mu_bg = 0.001
"""


@pytest.fixture
def cfg_file(tmp_path):
    def write(text, name="run.cfg"):
        p = tmp_path / name
        p.write_text(text)
        return p

    return write


def test_run_twice_identical_outputs(tmp_path, cfg_file):
    cfg = cfg_file(SMALL)
    for d in ("a", "b"):
        assert main(["run", "--config", str(cfg), "--out", str(tmp_path / d), "--seed", "42", "--workers", "1"]) == 0
    names = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert {"events.csv", "counters.csv", "summary.txt", "fringe.csv", "config.cfg"} <= set(names)
    for n in names:
        assert (tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes(), n


def test_config_file_not_modified(tmp_path, cfg_file):
    cfg = cfg_file(SMALL)
    before = cfg.read_bytes()
    main(["run", "--config", str(cfg), "--out", str(tmp_path / "o"), "--workers", "1"])
    assert cfg.read_bytes() == before


def test_seed_override_recorded(tmp_path, cfg_file):
    cfg = cfg_file(SMALL)
    main(["run", "--config", str(cfg), "--out", str(tmp_path / "o"), "--seed", "9", "--workers", "1"])
    assert load_config(tmp_path / "o" / "config.cfg").seed == 9


def test_bad_config_exit_1_names_key_and_line(tmp_path, cfg_file, capsys):
    cfg = cfg_file(SMALL + "frobnicate = 2\n")
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 1
    err = capsys.readouterr().err
    assert "frobnicate" in err and f"{cfg}:9" in err


def test_missing_config_exit_1(tmp_path):
    assert main(["run", "--config", str(tmp_path / "nope.cfg"), "--out", str(tmp_path / "o")]) == 1


def test_runtime_error_exit_2(tmp_path, cfg_file):
    # sweep needs at least two phase points
    cfg = cfg_file(SMALL)
    assert main(["sweep", "--config", str(cfg), "--out", str(tmp_path / "o"), "--workers", "1"]) == 2


def test_analyze_partial_log_exit_2(tmp_path, cfg_file):
    cfg = cfg_file(SMALL)
    out = tmp_path / "o"
    main(["run", "--config", str(cfg), "--out", str(out), "--workers", "1"])
    (out / "PARTIAL").write_text("aborted\n")
    assert main(["analyze", "--config", str(cfg), "--out", str(tmp_path / "r"), "--log", str(out)]) == 2


def test_sweep_then_analyze(tmp_path, cfg_file, capsys):
    cfg = cfg_file(SWEEP)
    out = tmp_path / "sweep"
    assert main(["sweep", "--config", str(cfg), "--out", str(out), "--workers", "1"]) == 0
    first = (out / "summary.txt").read_text()
    rows = (out / "fringe.csv").read_text().splitlines()
    assert rows[0] == "phase_rad,config,d1_counts,d2_counts,d1_corrected,d2_corrected"
    assert len(rows) == 1 + 8 * 2
    capsys.readouterr()
    again = tmp_path / "again"
    assert main(["analyze", "--config", str(cfg), "--out", str(again), "--log", str(out)]) == 0
    assert (again / "summary.txt").read_text() == first
    text = capsys.readouterr().out
    assert "visibility" in text.lower() and "alpha" in text.lower()


def test_causality_check(tmp_path, cfg_file, capsys):
    cfg = cfg_file(SMALL)
    out = tmp_path / "c"
    rc = main(["causality-check", "--config", str(cfg), "--out", str(out), "--pulses", "20000", "--check"])
    assert rc == 0
    report = (out / "causality.txt").read_text()
    assert "0 violations" in report
    clearance = float(report.split("minimum cone clearance at commutation start:")[1].split()[0])
    assert clearance == pytest.approx(48 - 25.5, abs=0.1)
    margins = (out / "causality_margins.csv").read_text().splitlines()
    assert len(margins) == 20001


def test_qrng_test_passes_default(tmp_path, cfg_file):
    cfg = cfg_file(SMALL)
    out = tmp_path / "q"
    rc = main(["qrng-test", "--config", str(cfg), "--out", str(out), "--bits", "100000", "--max-lag", "20"])
    assert rc == 0
    lines = (out / "qrng_autocorr.csv").read_text().splitlines()
    assert lines[0] == "lag,r" and len(lines) == 22


def test_check_exit_3_when_threshold_missed(tmp_path, cfg_file, capsys):
    cfg = cfg_file(SMALL + "[qrng]\nosc_amplitude = 0.3\n")
    rc = main(["qrng-test", "--config", str(cfg), "--out", str(tmp_path / "q"), "--bits", "100000", "--check"])
    assert rc == 3
    assert "FAIL max |r(k)|" in capsys.readouterr().out


def test_calibrate_writes_config(tmp_path, cfg_file):
    cfg = cfg_file(SMALL)
    out = tmp_path / "k"
    assert main(["calibrate", "--config", str(cfg), "--out", str(out), "--rate", "700", "--alpha", "0.12"]) == 0
    new = load_config(out / "calibrated.cfg")
    assert new.emitter.p_emit == pytest.approx(8.6494e-4, rel=1e-3)
    assert new.emitter.mu_bg == pytest.approx(5.7089e-5, rel=1e-3)


def test_calibrate_unreachable_visibility_exit_2(tmp_path, cfg_file):
    cfg = cfg_file(SMALL)
    rc = main(["calibrate", "--config", str(cfg), "--out", str(tmp_path / "k"), "--visibility", "0.99"])
    assert rc == 2


def test_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "delayed_choice", "--help"], capture_output=True, text=True)
    assert r.returncode == 0
    for sub in ("run", "sweep", "analyze", "qrng-test", "causality-check", "calibrate"):
        assert sub in r.stdout
