import csv
import json

import pytest

from sklab.cli import build_parser, main


def test_subcommands_listed():
    text = build_parser().format_help()
    for cmd in ("simulate-coupling", "solve-mapping", "check-field", "analyze", "bessel-table", "report"):
        assert cmd in text


def test_bessel_table(tmp_path, capsys):
    assert main(["--out", str(tmp_path), "bessel-table", "--a", "0.5", "--b", "2"]) == 0
    rows = list(csv.DictReader(open(tmp_path / "bessel_table.csv")))
    assert len(rows) == 1 and float(rows[0]["p_outer"]) == pytest.approx(0.5, abs=1e-15)
    assert "P(outer first)=0.5" in capsys.readouterr().out


def test_simulate_report_analyze(tmp_path, capsys):
    out = tmp_path / "sim"
    args = ["--out", str(out), "--seed", "3", "simulate-coupling", "--gamma", "0.3", "--j", "4",
            "--paths", "20", "--horizon", "0.005", "--traces", "2", "--record-every", "10"]
    assert main(args) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config"]["seed"] == 3 and len(manifest["cells"]) == 1
    trace = list(csv.reader(open(out / "run_g0.3_j4_p1.csv")))
    assert trace[0][:3] == ["t", "R", "A"] and len(trace) > 2
    assert main(["report", str(out)]) == 0
    assert main(["--out", str(tmp_path / "an"), "analyze", str(out)]) == 0
    rep = json.loads((tmp_path / "an" / "sim_report.json").read_text())
    assert len(rep["rows"]) == 1 and rep["rows"][0]["paths"] == 20
    capsys.readouterr()


def test_simulate_rejects_coarse_dt(tmp_path):
    with pytest.raises(ValueError):
        main(["--out", str(tmp_path), "simulate-coupling", "--j", "6", "--dt", "1e-5", "--paths", "2"])


def test_env_defaults(tmp_path, monkeypatch):
    monkeypatch.setenv("SKLAB_OUT", str(tmp_path / "envout"))
    monkeypatch.setenv("SKLAB_SEED", "17")
    assert main(["simulate-coupling", "--j", "4", "--paths", "4", "--horizon", "0.002",
                 "--traces", "0"]) == 0
    m = json.loads((tmp_path / "envout" / "manifest.json").read_text())
    assert m["config"]["seed"] == 17


def test_config_file(tmp_path):
    cfg = {"gammas": [0.3], "js": [4], "paths": 3, "horizon": 0.002, "seed": 5}
    path = tmp_path / "c.json"
    path.write_text(json.dumps(cfg))
    assert main(["--config", str(path), "--out", str(tmp_path / "o"), "simulate-coupling",
                 "--traces", "0"]) == 0
    m = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert m["config"]["paths"] == 3 and m["config"]["seed"] == 5


def test_solve_mapping_flat(tmp_path, capsys):
    assert main(["--out", str(tmp_path), "solve-mapping", "--phi", "flat", "--d", "2", "--n", "16"]) == 0
    cert = json.loads((tmp_path / "certificate.json").read_text())
    assert cert["passed"] and abs(cert["det_min"] - 1) < 1e-8
    assert (tmp_path / "slice.csv").exists()
    capsys.readouterr()


def test_check_field(tmp_path, capsys):
    code = main(["--out", str(tmp_path), "check-field", "--gamma", "0.3", "--n1", "2", "--m-max", "2",
                 "--refine", "1", "2"])
    res = json.loads(capsys.readouterr().out)
    assert code == (0 if res["stable"] else 1) and len(res["c1"]) == 2
    assert (tmp_path / "gradient_refine2.csv").exists()
