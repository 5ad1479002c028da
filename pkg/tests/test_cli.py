import json

import pytest

from conftest import wang_subjects
from npsa.cli import main
from npsa.io import write_dataset
from npsa.report import BUNDLE_FILES

FAST = ["--t0", "5", "--rt", "0.5", "--ns", "2", "--nt", "2", "--max-cycles", "3"]


@pytest.fixture
def sim(tmp_path):
    path = tmp_path / "sim.csv"
    assert main(["simulate", "--example", "onecomp", "--n", "6", "--seed", "1", "--out", str(path)]) == 0
    return path


def test_simulate_writes_truth(sim):
    assert sim.exists() and sim.with_name("sim_truth.csv").exists()


def test_fit_bundle_and_report(sim, tmp_path, capsys):
    out = tmp_path / "fit"
    code = main(["fit", "--model", "onecomp", "--data", str(sim), "--out", str(out), "--compute-d"] + FAST)
    assert code == 0
    assert "lnL=" in capsys.readouterr().out
    for name in BUNDLE_FILES + ("runinfo.txt",):
        assert (out / name).exists()
    record = json.loads((out / "result.json").read_text())
    assert record["mode"] == "npsa3" and record["cycles"] == 3
    assert record["d_value"] >= 0

    again = tmp_path / "again"
    assert main(["report", "--result", str(out), "--out", str(again)]) == 0
    for name in BUNDLE_FILES:
        assert (again / name).read_bytes() == (out / name).read_bytes(), name
    assert not (again / "runinfo.txt").exists()


def test_dcheck(sim, tmp_path, capsys):
    out = tmp_path / "fit"
    assert main(["fit", "--model", "onecomp", "--data", str(sim), "--out", str(out), "--mode", "osat"] + FAST) == 0
    capsys.readouterr()
    assert main(["dcheck", "--result", str(out / "result.json")]) == 0
    lines = dict(l.split(" = ") for l in capsys.readouterr().out.strip().splitlines())
    assert float(lines["d_value"]) >= 0


def test_config_file_with_flag_override(sim, tmp_path):
    cfg = tmp_path / "run.toml"
    cfg.write_text(
        f'model = "onecomp"\ndata = "{sim}"\nmode = "npsa2"\nK = 8\nseed = 5\nt0 = 5.0\nrt = 0.5\nns = 2\nnt = 2\nmax_cycles = 2\n'
    )
    out = tmp_path / "o"
    assert main(["fit", "--config", str(cfg), "--seed", "9", "--out", str(out)]) == 0
    record = json.loads((out / "result.json").read_text())
    assert record["config"]["seed"] == 9 and record["config"]["K"] == 8
    assert record["mode"] == "npsa2" and len(record["weights"]) == 8


def test_osat_on_wang_needs_beta(tmp_path, capsys):
    path = tmp_path / "w.csv"
    write_dataset(wang_subjects(5), path)
    code = main(["fit", "--model", "wang", "--mode", "osat", "--data", str(path), "--out", str(tmp_path / "o")])
    assert code == 2
    assert "fixed beta" in capsys.readouterr().err


@pytest.mark.parametrize(
    "args",
    [
        ["fit", "--model", "onecomp"],
        ["fit", "--model", "onecomp", "--data", "missing.csv", "--K", "4"],
        ["fit", "--model", "onecomp", "--data", "x.csv", "--mu-lower", "0", "--mu-upper", "1"],
    ],
)
def test_config_errors_exit_2(args, capsys):
    assert main(args) == 2
    assert "npsa: error" in capsys.readouterr().err


def test_bad_config_file(tmp_path, capsys):
    cfg = tmp_path / "bad.toml"
    cfg.write_text('model = "onecomp"\n[extra]\nx = 1\n')
    assert main(["fit", "--config", str(cfg)]) == 2
    cfg.write_text('model = "onecomp"\nbogus = 1\n')
    assert main(["fit", "--config", str(cfg)]) == 2
    assert "bogus" in capsys.readouterr().err


def test_missing_dataset_is_os_error(tmp_path, capsys):
    code = main(["fit", "--model", "onecomp", "--data", str(tmp_path / "nope.csv"), "--out", str(tmp_path / "o")])
    assert code == 1
