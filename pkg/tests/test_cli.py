import json

import numpy as np
import pytest
import yaml

from atomfunnel import config as C
from atomfunnel.cli import main


def _run(tmp_path, *args):
    return main(["run", "--out", str(tmp_path), *args])


def test_show_defaults_round_trips(capsys):
    assert main(["show-defaults"]) == 0
    assert yaml.safe_load(capsys.readouterr().out) == C.default_config()


def test_validate_verb(tmp_path, capsys):
    assert main(["validate"]) == 0
    assert json.loads(capsys.readouterr().out)["violations"] == []
    bad = tmp_path / "bad.yaml"
    bad.write_text(yaml.safe_dump({"barrier": {"circulating_power_mw": -3.0}}))
    assert main(["validate", "--config", str(bad)]) == 2
    out = json.loads(capsys.readouterr().out)
    assert out["violations"][0]["key"] == "barrier.circulating_power_mw"


def test_unknown_key_is_a_config_error(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("funnel:\n  colour: red\n")
    assert _run(tmp_path / "o", "--config", str(bad)) == 2
    err = json.loads(capsys.readouterr().err)
    assert err["key"] == "funnel.colour"
    assert not (tmp_path / "o").exists()


def test_potential_map(tmp_path):
    assert _run(tmp_path, "--scenario", "potential-map") == 0
    rows = np.loadtxt(tmp_path / "plugged_linecut.csv", delimiter=",", skiprows=1)
    z, u0 = rows[:, 0], rows[:, 1]
    near = z < 1000
    assert z[near][np.argmin(u0[near])] == pytest.approx(280, abs=30)
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["config_hash"] == C.config_hash(json.loads((tmp_path / "config.json").read_text()))
    assert set(manifest["files"]) >= {"plugged_linecut.csv", "lattice_linecut.csv", "potential_summary.json"}


@pytest.mark.parametrize("scenario", ["lifetime", "spectrum-trapped"])
def test_reruns_are_byte_identical(tmp_path, scenario):
    a, b = tmp_path / "a", tmp_path / "b"
    assert _run(a, "--scenario", scenario, "--seed", "11") == 0
    assert _run(b, "--scenario", scenario, "--seed", "11") == 0
    ma = json.loads((a / "manifest.json").read_text())
    mb = json.loads((b / "manifest.json").read_text())
    assert ma["config_hash"] == mb["config_hash"]
    numeric = [f for f in ma["files"] if f != "config.json"]
    assert numeric and all(ma["files"][f] == mb["files"][f] for f in numeric)
    assert ma["seed"] == 11


def test_spectrum_output_columns(tmp_path):
    assert _run(tmp_path, "--scenario", "spectrum-trapped") == 0
    header = (tmp_path / "spectrum_trapped.csv").read_text().splitlines()[0].split(",")
    assert header[:4] == ["delta_nu_mhz", "T", "T0", "T_over_T0"]
    rec = json.loads((tmp_path / "trap_fit.json").read_text())
    assert abs(rec["z_t_nm"] - 222) < 16


def test_numerical_failure_removes_partial_outputs(tmp_path, capsys):
    data = tmp_path / "one.csv"
    data.write_text("hold_ms,T_over_T0,error\n0,1.1,0.01\n")
    cfg = tmp_path / "c.yaml"
    cfg.write_text(yaml.safe_dump({"lifetime": {"data_csv": str(data)}}))
    out = tmp_path / "o"
    assert _run(out, "--scenario", "lifetime", "--config", str(cfg)) == 3
    assert json.loads(capsys.readouterr().err)["error"] == "numerical"
    assert list(out.iterdir()) == []


def test_lifetime_from_data_file(tmp_path):
    t = np.linspace(0, 12, 13)
    y = 1 + 0.2 * np.exp(-t / 3.0)
    data = tmp_path / "d.csv"
    np.savetxt(data, np.column_stack([t, y, np.full(13, 0.01)]), delimiter=",", header="hold_ms,T_over_T0,error",
               comments="")
    cfg = tmp_path / "c.yaml"
    cfg.write_text(yaml.safe_dump({"lifetime": {"data_csv": str(data)}}))
    assert _run(tmp_path / "o", "--scenario", "lifetime", "--config", str(cfg)) == 0
    rec = json.loads((tmp_path / "o" / "lifetime_fit.json").read_text())
    assert rec["tau_ms"] == pytest.approx(3.0, rel=1e-6)


@pytest.mark.slow
def test_guided_spectrum_from_bundled_data(tmp_path):
    assert _run(tmp_path, "--scenario", "spectrum-guided") == 0
    rec = json.loads((tmp_path / "guided_fit.json").read_text())
    assert rec["flux_per_ms"] == pytest.approx(161, rel=0.05)
    assert rec["data"].startswith("bundled:")
