import csv
import json

import numpy as np
import pytest

from qillum import cli, selftest
from qillum.calibration import CalibrationPoint, noise_density_model, write_points_csv
from qillum.constants import BandParams, from_db, moments_from_tmsv
from qillum.dsp import read_batch_csv, sample_records, synthesize_if, write_raw


def run(capsys, *argv):
    code = cli.main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture
def tiny_config(tmp_path):
    path = tmp_path / "tiny.toml"
    path.write_text(
        '[sweep]\nvariable = "n_s"\ngrid = [0.2, 1.0]\nM = 2000\nM_coherent = 2000\nrepetitions = 2\nseed = 5\n'
    )
    return path


def test_missing_config_key_exits_2(tmp_path, capsys):
    path = tmp_path / "bad.toml"
    path.write_text('[sweep]\nvariable = "n_s"\n')
    code, _, err = run(capsys, "sweep", "--config", str(path), "--out", str(tmp_path))
    assert code == 2
    assert "sweep.grid" in err


def test_missing_config_file_exits_2(tmp_path, capsys):
    code, _, err = run(capsys, "sweep", "--config", str(tmp_path / "nope.toml"))
    assert code == 2 and err


def test_sweep_writes_outputs(tiny_config, tmp_path, capsys):
    out = tmp_path / "out"
    code, stdout, _ = run(capsys, "sweep", "--config", str(tiny_config), "--out", str(out))
    assert code == 0
    assert sorted(p.name for p in out.iterdir()) == ["tiny.csv", "tiny_plot.csv", "tiny_summary.json"]
    rows = list(csv.DictReader((out / "tiny.csv").open()))
    assert len(rows) == 2 * 7
    assert json.loads((out / "tiny_summary.json").read_text())["complete"] is True


def test_seed_override_changes_output(tiny_config, tmp_path, capsys):
    texts = []
    for seed in ("5", "5", "6"):
        out = tmp_path / f"s{len(texts)}"
        assert run(capsys, "sweep", "--config", str(tiny_config), "--seed", seed, "--out", str(out))[0] == 0
        texts.append((out / "tiny.csv").read_text())
    assert texts[0] == texts[1] != texts[2]


def test_qillum_out_env(tiny_config, tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("QILLUM_OUT", str(tmp_path / "env"))
    assert run(capsys, "sweep", "--config", str(tiny_config))[0] == 0
    assert (tmp_path / "env" / "tiny.csv").exists()


def test_point_recipe(capsys):
    code, out, _ = run(capsys, "point", "--recipe", "fig2b", "--value", "0.3", "--no-monte-carlo")
    assert code == 0
    lines = out.strip().splitlines()
    assert lines[0].startswith("point,x,source") and len(lines) == 8


def test_incomplete_sweep_exits_3(tmp_path, capsys):
    path = tmp_path / "far.toml"
    path.write_text(
        '[sweep]\nvariable = "distance"\ngrid = [0.5, 3.0]\nmonte_carlo = false\n'
        '[distance_model]\nkind = "table"\ntable = [[0.5, -10.0], [1.0, -20.0]]\n'
    )
    code, _, err = run(capsys, "sweep", "--config", str(path), "--out", str(tmp_path))
    assert code == 3 and "incomplete" in err
    assert "# incomplete" in (tmp_path / "far.csv").read_text()


def _write_cal(path, temps, band, gain, n_add, noise=0.0, seed=0):
    rng = np.random.default_rng(seed)
    pts = []
    for t in temps:
        y = noise_density_model(t, gain, n_add, band, band.omega_i)
        pts.append(CalibrationPoint(t, y * (1 + noise * rng.standard_normal()), noise * y))
    write_points_csv(path, pts)


def test_calibrate_round_trip(tmp_path, capsys):
    band = BandParams.reference()
    path = tmp_path / "cal.csv"
    _write_cal(path, np.linspace(0.05, 1.0, 10), band, from_db(94.25), 14.91)
    code, out, _ = run(capsys, "calibrate", "--points", str(path), "--out", str(tmp_path))
    assert code == 0
    report = json.loads(out)
    assert report["gain_db"] == pytest.approx(94.25, abs=1e-9)
    assert report["n_add"] == pytest.approx(14.91, rel=1e-9)
    assert json.loads((tmp_path / "calibration.json").read_text()) == report


def test_calibrate_weighted(tmp_path, capsys):
    band = BandParams.reference()
    path = tmp_path / "cal.csv"
    _write_cal(path, np.linspace(0.05, 1.0, 10), band, from_db(94.25), 14.91, noise=0.01)
    code, out, _ = run(capsys, "calibrate", "--points", str(path), "--weighted")
    assert code == 0
    assert json.loads(out)["gain_db"] == pytest.approx(94.25, abs=0.5)


def test_calibrate_single_point_exits_3(tmp_path, capsys):
    band = BandParams.reference()
    path = tmp_path / "one.csv"
    _write_cal(path, [0.1], band, 1e9, 10.0)
    code, _, err = run(capsys, "calibrate", "--points", str(path))
    assert code == 3 and "two distinct" in err


def test_calibrate_bad_band_exits_2(tmp_path, capsys):
    path = tmp_path / "cal.csv"
    _write_cal(path, [0.1, 0.5], BandParams.reference(), 1e9, 10.0)
    assert run(capsys, "calibrate", "--points", str(path), "--band", str(tmp_path / "nope.toml"))[0] == 2


def test_demod_round_trip(tmp_path, capsys):
    band = BandParams.reference()
    batch = sample_records(moments_from_tmsv(0.5), 300, seed=4)
    raw_path = tmp_path / "rec.bin"
    write_raw(raw_path, synthesize_if(batch, band, gain=from_db(90.0)))
    code, out, _ = run(capsys, "demod", "--raw", str(raw_path), "--gain-db", "90", "--out", str(tmp_path))
    assert code == 0
    back = read_batch_csv(tmp_path / "rec_records.csv")
    # float32 storage limits the round trip
    np.testing.assert_allclose(back.a_s, batch.a_s, rtol=1e-4, atol=1e-5)
    np.testing.assert_allclose(back.a_i, batch.a_i, rtol=1e-4, atol=1e-5)
    assert json.loads(out)["M"] == 300


def test_selftest_passes(capsys):
    code, out, _ = run(capsys, "selftest")
    assert code == 0
    lines = out.strip().splitlines()
    assert len(lines) == len(selftest.properties())
    assert all(line.startswith("PASS") for line in lines)


@pytest.mark.parametrize("fault", sorted(selftest.FAULTS))
def test_selftest_detects_fault(fault, capsys):
    code, out, _ = run(capsys, "selftest", "--inject-fault", fault)
    assert code == 1
    assert "FAIL" in out


def test_keys_lists_units(capsys):
    code, out, _ = run(capsys, "keys")
    assert code == 0 and "[sweep]" in out and "n_env" in out
