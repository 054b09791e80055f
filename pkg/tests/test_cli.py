import json
import math
import os

import pytest

from conelab.cli import main


@pytest.fixture(autouse=True)
def _workdir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    return tmp_path


def test_parameter_errors_exit_2(capsys):
    assert main(["spectrum", "--theta", "0.7", "--omega", "0.6"]) == 2
    assert main(["spectrum", "--theta", "1.5708", "--omega", "0.3"]) == 2
    # layer counting in the supercritical regime has no defined slope
    assert main(["counting", "--mode", "layer", "--theta", "1.0",
                 "--omega", "0.4", "--L", "200"]) == 2
    err = capsys.readouterr().err
    assert "parameter error" in err


def test_insufficient_points_exit_4():
    # subcritical 1D operator: finitely many negatives, no fit possible
    assert main(["counting", "--mode", "oned", "--gamma", "0.2",
                 "--L1d", str(math.exp(8)), "--nodes", "800"]) == 4


def test_mesh_export(tmp_path, capsys):
    assert main(["mesh-export", "--theta", "0.7", "--L", str(4 * math.pi),
                 "--n-sigma", "8", "--n-t", "8",
                 "--out", "m.json"]) == 0
    doc = json.loads((tmp_path / "m.json").read_text())
    assert len(doc["nodes"]) == 9 * 9
    # short truncation warns on stderr
    assert main(["mesh-export", "--theta", "0.7", "--L", str(2.5 * math.pi),
                 "--n-sigma", "8", "--n-t", "8", "--out", "m2.json"]) == 0
    assert "truncation" in capsys.readouterr().err


def test_spectrum_reproducible(tmp_path):
    args = ["spectrum", "--theta", "0.15", "--omega", "0.3",
            "--L", str(math.exp(7)), "--h", "0.02", "--n-t", "16",
            "-k", "4", "--format", "json"]
    assert main(args + ["--out", "a"]) == 0
    assert main(args + ["--out", "b"]) == 0
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
    doc = json.loads((tmp_path / "a.json").read_text())
    assert doc["schema_version"] == 1
    assert len(doc["eigenvalues"]) >= 1


def test_config_merge(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"n_sigma": 10, "n_t": 6, "L": 4 * math.pi}))
    assert main(["--config", str(cfg), "mesh-export", "--theta", "0.7",
                 "--out", "m.json"]) == 0
    doc = json.loads((tmp_path / "m.json").read_text())
    assert len(doc["nodes"]) == 11 * 7
    # explicit flag beats the config value
    assert main(["--config", str(cfg), "mesh-export", "--theta", "0.7",
                 "--n-sigma", "5", "--out", "m2.json"]) == 0
    doc2 = json.loads((tmp_path / "m2.json").read_text())
    assert len(doc2["nodes"]) == 6 * 7


def test_transition_warning_on_supercritical_grid(tmp_path, capsys):
    assert main(["transition", "--theta", str(math.pi / 3),
                 "--omega-grid", "0.3,0.35,0.4", "--L", "50",
                 "--h", "0.02", "--n-t", "16",
                 "--format", "json", "--out", "t"]) == 0
    out = capsys.readouterr()
    assert "warning" in out.err
    doc = json.loads((tmp_path / "t.json").read_text())
    assert doc["counts"] == [0, 0, 0]


def test_counting_oned_run(tmp_path, capsys):
    assert main(["counting", "--mode", "oned", "--gamma", "5",
                 "--out", "c"]) == 0
    assert (tmp_path / "c.csv").exists()
    fit = json.loads((tmp_path / "c_fit.json").read_text())
    assert fit["relative_deviation"] < 0.10
    assert "fitted slope" in capsys.readouterr().out


def test_monotonicity_run(tmp_path):
    assert main(["monotonicity", "--theta-grid", "0.5,0.7,0.9",
                 "--omega", "0.1", "-k", "2", "--L", "40",
                 "--n-sigma", "40", "--n-t", "12",
                 "--format", "json", "--out", "mono"]) == 0
    doc = json.loads((tmp_path / "mono.json").read_text())
    assert doc["monotone"] == [True, True]


def test_hardy_run(tmp_path, capsys):
    assert main(["hardy", "--theta", str(math.pi / 4),
                 "--L", str(6 * math.pi), "--n-sigma", "32", "--n-t", "10",
                 "--eps-reg", "1e-2,1e-3", "--out", "h"]) == 0
    doc = json.loads((tmp_path / "h.json").read_text())
    assert doc["c_est"] > 0
    assert (tmp_path / "h_margins.csv").exists()
    assert "c_est" in capsys.readouterr().out


def test_svg_output(tmp_path):
    assert main(["spectrum", "--theta", "0.15", "--omega", "0.3",
                 "--L", str(math.exp(7)), "--h", "0.02", "--n-t", "16",
                 "-k", "2", "--svg", "plot.svg", "--out", "s"]) == 0
    assert (tmp_path / "plot.svg").read_text().lstrip().startswith("<?xml")
