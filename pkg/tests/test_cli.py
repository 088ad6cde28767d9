import re
from pathlib import Path

import numpy as np
import pytest
from click.testing import CliRunner

from pmu_dse import io as csvio
from pmu_dse.cli import main

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def short_config(tmp_path, name="auto", horizon=30, extra=""):
    text = (CONFIGS / f"demo_{name}.ini").read_text()
    text = re.sub(r"horizon = \d+", f"horizon = {horizon}", text) + extra
    path = tmp_path / f"{name}.ini"
    path.write_text(text)
    return path


def invoke(*args):
    return CliRunner().invoke(main, [str(a) for a in args], catch_exceptions=False)


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("cli")
    auto, cross = short_config(tmp, "auto"), short_config(tmp, "cross")
    for cfg, sub in ((auto, "auto"), (cross, "cross")):
        r = invoke("simulate", cfg, "-o", tmp / sub)
        assert r.exit_code == 0, r.output
    return tmp, auto, cross


def test_full_chain(workdir):
    tmp, auto, cross = workdir
    d = tmp / "auto"
    assert invoke("map", auto, d / "pmu.csv", "-o", d).exit_code == 0
    r = invoke("estimate", auto, d / "terminal.csv", "--truth", d / "truth.csv", "-o", d)
    assert r.exit_code == 0 and "a2_hat=" in r.output
    est = csvio.read_estimates_csv(d / "estimates.csv")
    a2 = 100 * np.pi / (2 * 6.18)
    assert abs(est["a2_hat"][-1] - a2) / a2 < 0.02
    csvio.read_diagnostics_csv(d / "diagnostics.csv")
    r = invoke("playback", auto, d / "terminal.csv", d / "estimates.csv", "--truth", d / "truth.csv", "-o", d)
    assert r.exit_code == 0
    pb = csvio.read_playback_csv(d / "playback.csv")
    assert np.max(np.abs(pb["err_it"][-500:])) < 0.01
    r = invoke("validate", auto, "--auto", d, "--cross", tmp / "cross", "--cross-config", cross,
               "-o", tmp / "report")
    assert r.exit_code == 0, r.output
    assert "scenario: cross" in (tmp / "report" / "report.txt").read_text()
    kv = (tmp / "report" / "report.kv").read_text()
    assert "auto.a2_hat=" in kv and "cross.delta2_ref=" in kv
    values = dict(line.split("=") for line in kv.splitlines())
    assert abs(float(values["auto.a2_rel_err_pct"])) < 1.0
    rows = (tmp / "report" / "report.csv").read_text().splitlines()
    assert len(rows) == 3


def test_seeded_noise_is_reproducible(tmp_path):
    cfg = short_config(tmp_path, horizon=2, extra="")
    text = cfg.read_text().replace("noise = false", "noise = true")
    cfg.write_text(text)
    for sub in ("a", "b"):
        assert invoke("simulate", cfg, "-o", tmp_path / sub, "--seed", 5).exit_code == 0
    assert (tmp_path / "a" / "pmu.csv").read_bytes() == (tmp_path / "b" / "pmu.csv").read_bytes()
    assert invoke("simulate", cfg, "-o", tmp_path / "c", "--seed", 6).exit_code == 0
    assert (tmp_path / "a" / "pmu.csv").read_bytes() != (tmp_path / "c" / "pmu.csv").read_bytes()


def test_errors_are_one_line(tmp_path):
    bad = tmp_path / "bad.ini"
    bad.write_text("[machine]\nH = -1\nxdp = 0\n")
    r = CliRunner().invoke(main, ["simulate", str(bad), "-o", str(tmp_path)])
    assert r.exit_code == 1
    lines = r.output.strip().splitlines()
    assert len(lines) == 1 and lines[0].startswith("error: ConfigError:")
    assert "machine.H" in lines[0] and "machine.xdp" in lines[0]
    r = CliRunner().invoke(main, ["map", str(CONFIGS / "demo_auto.ini"), str(tmp_path / "none.csv"),
                                  "-o", str(tmp_path)])
    assert r.exit_code == 1 and r.output.startswith("error: FileNotFoundError")


def test_mismatched_truth(workdir, tmp_path):
    tmp, auto, _ = workdir
    d = tmp / "auto"
    invoke("map", auto, d / "pmu.csv", "-o", d)
    short = tmp_path / "truth.csv"
    lines = (d / "truth.csv").read_text().splitlines()
    short.write_text("\n".join(lines[:10]) + "\n")
    r = CliRunner().invoke(main, ["estimate", str(auto), str(d / "terminal.csv"), "--truth", str(short),
                                  "-o", str(tmp_path)])
    assert r.exit_code == 1 and "DataError" in r.output


def test_no_excitation_exit_code(tmp_path):
    cfg = short_config(tmp_path, horizon=15)
    text = cfg.read_text()
    text = re.sub(r"angle_sines = .*", "angle_sines =", text)
    text = re.sub(r"mag_sines = .*", "mag_sines =", text)
    text = text.replace("freq_offset_hz = 0.05", "freq_offset_hz = 0.0")
    text = text.replace("ma_window = 10", "ma_window = 10\ndelta2_ref = 1e-4")
    cfg.write_text(text)
    assert invoke("simulate", cfg, "-o", tmp_path).exit_code == 0
    assert invoke("map", cfg, tmp_path / "pmu.csv", "-o", tmp_path).exit_code == 0
    r = CliRunner().invoke(main, ["estimate", str(cfg), str(tmp_path / "terminal.csv"),
                                  "--truth", str(tmp_path / "truth.csv"), "-o", str(tmp_path)])
    assert r.exit_code == 3
    assert "excitation" in r.output


def test_identity_network_map(tmp_path):
    cfg = short_config(tmp_path, horizon=1, extra="")
    text = cfg.read_text()
    for old, new in (("r = 0.004", "r = 0"), ("x = 0.04", "x = 0"), ("b = 0.03", "b = 0"),
                     ("rcu_hv = 0.002", "rcu_hv = 0"), ("rcu_lv = 0.002", "rcu_lv = 0"),
                     ("xsig_hv = 0.06", "xsig_hv = 0"), ("xsig_lv = 0.06", "xsig_lv = 0"),
                     ("xm = 500", "xm = 1e14"), ("rfe = 1000", "rfe = 1e14"),
                     ("p_as_max = 0.05", "p_as_max = 0")):
        text = text.replace(old, new)
    cfg.write_text(text)
    t = np.arange(10) * 0.02
    v = 1.01 * np.exp(1j * (0.2 + t))
    i = 0.6 * np.exp(1j * (2.5 - t))
    from pmu_dse.network import PmuSeries
    csvio.write_pmu_csv(tmp_path / "pmu.csv", PmuSeries(t, v, i, np.zeros(10)))
    assert invoke("map", cfg, tmp_path / "pmu.csv", "-o", tmp_path).exit_code == 0
    y = csvio.read_terminal_csv(tmp_path / "terminal.csv")
    assert np.allclose(y.v, v, atol=1e-12)
    assert np.allclose(y.i, -i, atol=1e-12)   # plant-side currents point towards the grid
