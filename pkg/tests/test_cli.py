import csv
import hashlib
import json

import numpy as np
import pytest

from imor.cli import ExperimentConfig, main, parse_demand, run_experiment
from imor.errors import ValidationError

CHAIN20 = ["--chain", "20", "--length", "18.15", "--diameter", "1.422", "--roughness", "1.5e-6",
           "--rs", "518.26", "--supply", "84e5", "--demand", "pwl:0:100,200:120,400:100",
           "--t-end", "400", "--dt", "8"]


def rows(path):
    with open(path, newline="") as fh:
        r = list(csv.reader(fh))
    return r[0], r[1:]


def test_simulate_one_pipe(tmp_path, capsys):
    out = tmp_path / "one"
    code = main(["simulate", "--chain", "1", "--supply", "60e5", "--demand", "50",
                 "--t-end", "3600", "--dt", "60", "--model", "dae", "--out", str(out)])
    assert code == 0
    header, body = rows(out / "trajectory_dae.csv")
    assert header == ["t", "y_1", "y_2"]
    assert len(body) == 61
    # constant inputs from the steady state: output stays put
    y = np.array([[float(v) for v in r[1:]] for r in body])
    assert np.abs(y - y[0]).max() <= 1e-6 * np.abs(y).max()
    report = json.loads((out / "timing_dae.json").read_text())
    assert report["dimensions"]["n"] == 4
    capsys.readouterr()


def test_compare_chain(tmp_path, capsys):
    out = tmp_path / "cmp"
    assert main(["compare", *CHAIN20, "--out", str(out)]) == 0
    errs = json.loads((out / "errors.json").read_text())["errors"]
    assert set(errs) == {"ode_vs_dae", "decoupled_vs_dae", "decoupled_vs_ode"}
    assert all(e["output_error"] < 1e-4 for e in errs.values())
    header, body = rows(out / "comparison.csv")
    assert header[0] == "t" and "decoupled:y_2" in header and len(body) == 51
    capsys.readouterr()


def test_reduce_ipod_sizes_and_export(tmp_path, capsys):
    out = tmp_path / "rom"
    assert main(["reduce", *CHAIN20, "--model", "ipod", "--rp", "2", "--rq", "4", "--out", str(out)]) == 0
    header, body = rows(out / "summary_ipod.csv")
    assert header == ["ROM", "r", "pct_red", "output_error", "speed_up"]
    assert body[0][0] == "I-POD" and body[0][1] == "6"
    assert (out / "rom_ipod" / "manifest.json").is_file()
    assert main(["export", str(out)]) == 0
    h, b = rows(out / "combined.csv")
    assert h[:2] == ["t", "decoupled:y_1"] and any(c.startswith("ipod:") for c in h)
    exp = json.loads((out / "export.json").read_text())
    assert exp["models"] == ["decoupled", "ipod"] and "rom_ipod" in exp["bundles"]
    capsys.readouterr()


@pytest.mark.parametrize("model,flag", [("dae-pod", ["--r", "4"]), ("ode-pod", ["--r", "3"])])
def test_reduce_baselines(tmp_path, capsys, model, flag):
    out = tmp_path / model
    assert main(["reduce", *CHAIN20, "--model", model, *flag, "--out", str(out)]) == 0
    m = json.loads((out / f"metrics_{model}.json").read_text())
    assert m["summary"]["r"] == int(flag[1])
    assert np.isfinite(m["summary"]["output_error"])
    capsys.readouterr()


def test_outputs_are_deterministic(tmp_path, capsys):
    digests = []
    for k in range(2):
        out = tmp_path / f"d{k}"
        main(["simulate", *CHAIN20, "--model", "decoupled", "--out", str(out)])
        digests.append(hashlib.sha256((out / "trajectory_decoupled.csv").read_bytes()).hexdigest())
    assert digests[0] == digests[1]
    capsys.readouterr()


def test_validation_exit_code(tmp_path, capsys):
    assert main(["simulate", "--chain", "0", "--supply", "60e5", "--demand", "50",
                 "--t-end", "10", "--dt", "1", "--out", str(tmp_path)]) == 2
    err = json.loads(capsys.readouterr().err)
    assert err["exit_code"] == 2 and err["error"]


def test_numerical_exit_code(tmp_path, capsys):
    code = main(["simulate", "--chain", "2", "--supply", "10e5", "--demand", "1e6",
                 "--t-end", "100", "--dt", "10", "--init", "guess", "--model", "dae", "--out", str(tmp_path)])
    assert code == 3
    err = json.loads(capsys.readouterr().err)
    assert err["exit_code"] == 3


def test_export_missing(tmp_path, capsys):
    assert main(["export", str(tmp_path / "nothing")]) == 2
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "MissingArtifactError" and err["missing"]


def test_scenario_parse_error_reports_location(tmp_path, capsys):
    bad = tmp_path / "s.json"
    bad.write_text('{"t_end": 10,\n "dt": "x"}')
    code = main(["simulate", "--chain", "1", "--scenario", str(bad), "--out", str(tmp_path / "o")])
    assert code == 2
    err = json.loads(capsys.readouterr().err)
    assert err["exit_code"] == 2


def test_parse_demand_forms():
    assert parse_demand("5")(3.0) == 5.0
    assert parse_demand("step:10,1,2")(10.0) == 2.0
    assert parse_demand("pwl:0:0,10:10")(5.0) == pytest.approx(5.0)
    assert parse_demand("sine:1,2,3")(0.0) == pytest.approx(1.0)
    with pytest.raises(ValidationError):
        parse_demand("ramp:1")


def test_run_experiment_programmatic(tmp_path, capsys):
    cfg = ExperimentConfig(chain=1, supply=60e5, demand="50", t_end=600.0, dt=60.0, model="ode",
                           out=str(tmp_path))
    cfg.validate()
    assert run_experiment(cfg, "simulate") == 0
    assert (tmp_path / "trajectory_ode.csv").is_file()
    capsys.readouterr()


def test_demand_list_per_node(tmp_path, capsys):
    out = tmp_path / "t"
    assert main(["simulate", "--tree", "8", "--demands", "2", "--supply", "70e5", "--demand", "list:60,30",
                 "--t-end", "600", "--dt", "60", "--model", "ode", "--out", str(out)]) == 0
    header, body = rows(out / "trajectory_ode.csv")
    # one supply flow, then the two demand pressures
    assert header == ["t", "y_1", "y_2", "y_3"]
    assert abs(abs(float(body[-1][1])) - 90.0) < 1e-6
    capsys.readouterr()
    assert main(["simulate", "--tree", "8", "--demands", "2", "--supply", "70e5", "--demand", "list:60",
                 "--t-end", "600", "--dt", "60", "--out", str(out)]) == 2
    assert "2 demand nodes" in json.loads(capsys.readouterr().err)["message"]


def test_block_basis_too_small_is_a_validation_error(tmp_path, capsys):
    code = main(["reduce", *CHAIN20, "--model", "ipod", "--rp", "1", "--rq", "1", "--out", str(tmp_path)])
    assert code == 2
    assert "--basis plain" in json.loads(capsys.readouterr().err)["message"]


def test_spectrum_summary_modulus_order():
    from imor.cli import _spectrum_summary

    s = _spectrum_summary(np.array([3j, -3j, 0.5j, -0.5j, -1j, 1j]))
    assert s["lambda_min"] == [0.0, -0.5] and s["lambda_max"] == [0.0, 3.0]
