import json

import pytest

from dualfields.cli import main


def write(tmp_path, name, doc):
    p = tmp_path / name
    p.write_text(json.dumps(doc))
    return str(p)


SMALL = {"sigma": 1, "alpha": 1, "rho": "1/2", "L": 6, "n_eta": 20, "k_max": 2}


def test_check_passes_default(tmp_path):
    cfg = write(tmp_path, "c.json", SMALL)
    assert main(["check", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
    doc = json.loads((tmp_path / "o/report.json").read_text())
    assert set(doc) >= {"schema_version", "config", "convention", "suites", "timing"}
    assert doc["suites"]["duality"] == "PASS"


def test_flipped_convention_fails(tmp_path, capsys):
    cfg = write(tmp_path, "c.json", {**SMALL, "convention": {"flip": True}})
    assert main(["check", "--config", cfg, "--out", str(tmp_path / "o")]) == 1
    assert "duality residual" in capsys.readouterr().out


def test_asymmetric_kernel_is_usage_error(tmp_path, capsys):
    cfg = write(tmp_path, "c.json", {**SMALL, "kernel_weights": [[1, "2/3"], [-1, "1/3"]]})
    assert main(["check", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
    assert "SymmetryViolation" in capsys.readouterr().err


@pytest.mark.parametrize("doc", [{"suite": "nope"}, {"suite": "martingale", "replicas": 1},
                                 {"bogus": 1}, {"L": 2}, {"n_list": [2, 8, 16]},
                                 {"phi": {"kind": "wavelet"}}])
def test_config_errors(tmp_path, doc):
    cfg = write(tmp_path, "c.json", doc)
    assert main(["experiment", "--config", cfg, "--out", str(tmp_path / "o")]) == 2


def test_missing_config_and_bad_command(tmp_path):
    assert main(["check", "--config", str(tmp_path / "missing.json")]) == 2
    assert main(["frobnicate"]) == 2


def test_experiment_deterministic_across_workers(tmp_path):
    cfg = write(tmp_path, "c.json", {"suite": "martingale", "k": 1, "L": 12, "replicas": 40, "T": 0.05})
    assert main(["experiment", "--config", cfg, "--out", str(tmp_path / "a"), "--seed", "4"]) in (0, 1)
    main(["experiment", "--config", cfg, "--out", str(tmp_path / "b"), "--seed", "4", "--workers", "2"])
    assert (tmp_path / "a/data.csv").read_bytes() == (tmp_path / "b/data.csv").read_bytes()


def test_simulate_outputs(tmp_path, capsys):
    cfg = write(tmp_path, "c.json", {"sigma": -1, "alpha": 1, "rho": "1/2", "L": 8, "T": 2})
    for out in ("a", "b"):
        assert main(["simulate", "--config", cfg, "--out", str(tmp_path / out), "--seed", "9"]) == 0
    assert "seed 9" in capsys.readouterr().out
    assert (tmp_path / "a/trajectory.csv").read_bytes() == (tmp_path / "b/trajectory.csv").read_bytes()
    empty = write(tmp_path, "e.json", {"L": 8, "eta0": [0] * 8})
    assert main(["simulate", "--config", empty, "--out", str(tmp_path / "e")]) == 0
    assert (tmp_path / "e/trajectory.csv").read_text().splitlines() == ["time,from_site,to_site"]
    bad = write(tmp_path, "b.json", {"sigma": -1, "alpha": 1, "rho": "1/2", "L": 8, "eta0": [2] * 8})
    assert main(["simulate", "--config", bad, "--out", str(tmp_path / "x")]) == 2
    dual = write(tmp_path, "d.json", {"L": 8, "xi0": [0, 0, 3], "T": 1})
    assert main(["simulate", "--config", dual, "--out", str(tmp_path / "d")]) == 0
    assert (tmp_path / "d/dual_trajectory.csv").exists()


def test_dump_table_and_resolve(tmp_path, capsys):
    cfg = write(tmp_path, "c.json", {"sigma": -1, "alpha": 2, "rho": "1/2"})
    assert main(["dump-table", "--config", cfg, "--out", str(tmp_path)]) == 0
    assert (tmp_path / "duality_table.csv").read_text().startswith("m,n,numerator,denominator")
    capsys.readouterr()
    assert main(["resolve-convention", "--config", cfg]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["source"] == "mean_zero_repair[family]" and doc["degree1_constant"] == "4"
