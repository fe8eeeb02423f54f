import json
import os

import pytest

from fpld.cli import main, read_sample
from fpld.core import FpldNatural, params_to_json, sample
from fpld.pipeline import ValidationError
from helpers import daily_dates, synthetic_station, write_station_files


def files(out):
    return {name: open(os.path.join(out, name), "rb").read() for name in sorted(os.listdir(out))}


@pytest.fixture(scope="module")
def station_files(tmp_path_factory):
    d = tmp_path_factory.mktemp("stations")
    stations = [synthetic_station(f"S{i}", daily_dates("2000-01-01", 731), seed=40 + i) for i in range(3)]
    obs, meta = str(d / "obs.csv"), str(d / "stations.csv")
    write_station_files(stations, obs, meta)
    return obs, meta


@pytest.fixture
def sample_file(tmp_path):
    path = tmp_path / "y.csv"
    y = sample(FpldNatural(6.0, 3.0, 0.1, 0.4, 0.3), 300, seed=1)
    path.write_text("dtr\n" + "\n".join(repr(float(v)) for v in y) + "\n")
    return str(path)


def test_help_exits_zero(capsys):
    assert main(["--help"]) == 0
    assert "simulate" in capsys.readouterr().out


def test_crps_of_uniform(tmp_path):
    params = tmp_path / "p.json"
    params.write_text(params_to_json(FpldNatural(0, 2, 0, 1, 1)))
    out = str(tmp_path / "out")
    assert main(["crps", "--params", str(params), "--y", "0,0.5", "--out", out]) == 0
    doc = json.loads(open(os.path.join(out, "crps.json")).read())
    assert doc["crps"][0] == pytest.approx(1 / 6)
    assert doc["n"] == 2 and "e_mu" in doc


def test_fit_single_sample(tmp_path, sample_file):
    a, b = str(tmp_path / "a"), str(tmp_path / "b")
    argv = ["fit", "--input", sample_file, "--estimator", "mq,ml"]
    assert main(argv + ["--out", a]) == 0
    assert main(argv + ["--out", b]) == 0
    assert files(a) == files(b) == {"fit.json": files(a)["fit.json"]}
    docs = json.loads(files(a)["fit.json"])
    assert [d["estimator"] for d in docs] == ["mq", "ml"]
    assert "elapsed_ms" not in docs[0]
    assert main(argv + ["--out", a, "--timing"]) == 0
    assert "fit_timing.json" in files(a)


def test_fit_stations_with_permutation(tmp_path, station_files):
    obs, meta = station_files
    out = str(tmp_path / "m")
    argv = ["fit", "--input", obs, "--stations", meta, "--seasons", "winter",
            "--distribution", "fpld,gamma", "--compare-to", "FPLD(MQ)", "--n-perm", "100",
            "--out", out]
    assert main(argv) == 0
    written = files(out)
    assert {"marginal.csv", "marginal_summary.csv", "cleaning.json", "permutation.json",
            "marginal_qq.csv", "marginal_pit_hist.csv"} <= set(written)
    clean = json.loads(written["cleaning.json"])
    assert clean["retained_stations"] == 3
    assert main(argv[:-1] + [str(tmp_path / "m2")]) == 0
    assert files(str(tmp_path / "m2")) == written


def test_regress_in_sample(tmp_path, station_files):
    obs, meta = station_files
    out = str(tmp_path / "r")
    assert main(["regress", "--input", obs, "--stations", meta, "--seasons", "winter",
                 "--mode", "in-sample", "--format", "json", "--out", out]) == 0
    doc = json.loads(files(out)["regression_in_sample.json"])
    assert {r["model"] for r in doc["rows"]} == {"FPLD-QR(in-sample)"}
    assert "regression_in_sample_coefficients.json" in files(out)


def test_simulate_is_reproducible(tmp_path):
    argv = ["simulate", "--replicates", "2", "--min-exponent", "7", "--max-exponent", "7",
            "--estimators", "mq", "--mc-samples", "500", "--seed", "3"]
    assert main(argv + ["--out", str(tmp_path / "a")]) == 0
    assert main(argv + ["--out", str(tmp_path / "b")]) == 0
    assert files(str(tmp_path / "a")) == files(str(tmp_path / "b"))
    assert set(files(str(tmp_path / "a"))) == {"simulation_summary.csv", "simulation_rows.json"}


def test_check_passes(tmp_path, capsys):
    assert main(["check", "--cases", "5", "--out", str(tmp_path)]) == 0
    assert capsys.readouterr().out.count("PASS") == 4
    rows = json.loads(files(str(tmp_path))["check.json"])
    assert all(r["passed"] for r in rows)


def test_config_file_supplies_flags(tmp_path, sample_file):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"input": sample_file, "estimator": "ml", "out": str(tmp_path / "c")}))
    assert main(["fit", "--config", str(cfg)]) == 0
    assert json.loads(files(str(tmp_path / "c"))["fit.json"])[0]["estimator"] == "ml"


@pytest.mark.parametrize("argv", [
    ["fit", "--input", "missing.csv"],
    ["fit", "--estimator", "moments", "--input", "x"],
    ["simulate", "--skill-mode", "best"],
    ["simulate", "--format", "xml"],
    ["regress", "--mode", "holdout", "--input", "x", "--stations", "y"],
    ["crps"],
    ["check", "--cases", "0"],
])
def test_invalid_input_exits_two(argv, tmp_path, capsys):
    assert main(argv + ["--out", str(tmp_path)]) == 2
    assert "error:" in capsys.readouterr().err


def test_unknown_config_key(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"colour": "red"}))
    assert main(["fit", "--config", str(cfg)]) == 2


def test_bad_station_file_exits_two(tmp_path, station_files, capsys):
    obs, _ = station_files
    meta = tmp_path / "bad.csv"
    meta.write_text("station_id,easting,northing,altitude,distance_to_sea\nS0,1,2,x,4\n")
    assert main(["fit", "--input", obs, "--stations", str(meta), "--out", str(tmp_path)]) == 2
    assert "line 2: column altitude" in capsys.readouterr().err


def test_read_sample(tmp_path):
    path = tmp_path / "y.txt"
    path.write_text("value\n1.5\n\n2.5\n")
    assert read_sample(str(path)).tolist() == [1.5, 2.5]
    path.write_text("1\nabc\n")
    with pytest.raises(ValidationError, match="line 2"):
        read_sample(str(path))
