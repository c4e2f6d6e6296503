import json

import pytest

from sohgraph.cli import main

SMALL = ["--set", "synth.knee_cycle=60", "--set", "synth.linear_rate=5e-4", "--set", "synth.knee_rate=4e-5"]
CHEAP = ["--set", "engine.hidden=6", "--set", "engine.dense=5", "--epochs", "30"]


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["-q", "synth", "-o", str(root / "data"), "--cycles", "160", "--seed", "4", *SMALL]) == 0
    assert main(["-q", "train", "-o", str(root / "train"), "--data", str(root / "data"), *SMALL, *CHEAP]) == 0
    return root


def test_synth_outputs(workdir):
    data = workdir / "data"
    assert (data / "cycles.csv").read_text().startswith("cycle,t,voltage\n")
    assert (data / "labels.csv").read_text().count("\n") == 161
    run = json.loads((data / "run.json").read_text())
    assert run["command"] == "synth" and run["config"]["synth"]["seed"] == 4


def test_synth_is_deterministic(workdir, tmp_path):
    assert main(["-q", "synth", "-o", str(tmp_path), "--cycles", "160", "--seed", "4", *SMALL]) == 0
    for name in ("cycles.csv", "labels.csv"):
        assert (tmp_path / name).read_bytes() == (workdir / "data" / name).read_bytes()


def test_train_outputs(workdir):
    out = workdir / "train"
    for name in ("model.json", "history.csv", "loss.svg", "run.json"):
        assert (out / name).exists(), name
    assert (out / "history.csv").read_text().count("\n") == 31


def test_replay_from_run_json_is_byte_identical(workdir, tmp_path):
    src = workdir / "train"
    assert main(["-q", "train", "-c", str(src / "run.json"), "-o", str(tmp_path)]) == 0
    for name in ("model.json", "history.csv", "loss.svg"):
        assert (tmp_path / name).read_bytes() == (src / name).read_bytes(), name


def test_estimate_and_eval(workdir, tmp_path):
    model = workdir / "train" / "model.json"
    assert main(["-q", "estimate", "-o", str(tmp_path), "--data", str(workdir / "data"), "--model", str(model), *SMALL]) == 0
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["rows"] and report["model_ref"]["checksum"]
    assert (tmp_path / "report.csv").read_text().startswith("gamma,measured_soh,estimated_soh,padded\n")
    assert (tmp_path / "soh.svg").read_text().lstrip().startswith("<?xml")
    assert main(["-q", "eval", str(tmp_path / "report.json"), "-o", str(tmp_path / "ev")]) == 0
    ev = json.loads((tmp_path / "ev" / "eval.json").read_text())
    assert ev["rmse"] == report["rmse"] and ev["mae"] == report["mae"]


def test_profile_and_select(workdir, tmp_path):
    data = str(workdir / "data")
    assert main(["-q", "profile", "-o", str(tmp_path), "--data", data, *SMALL]) == 0
    discord = json.loads((tmp_path / "discord.json").read_text())
    assert discord["v_ref"] > 2.0
    assert (tmp_path / "profile.csv").read_text().startswith("position,distance,match_index\n")
    assert main(["-q", "select", "-o", str(tmp_path / "sel"), "--data", data, "--vref", str(discord["v_ref"]), *SMALL]) == 0
    assert (tmp_path / "sel" / "segments.csv").exists()


def test_sweep(workdir, tmp_path):
    args = ["-q", "sweep", "-o", str(tmp_path), "--data", str(workdir / "data"), "--count", "3", *SMALL, *CHEAP]
    assert main(args) == 0
    rows = json.loads((tmp_path / "sweep.json").read_text())
    assert len(rows) == 3 and sum(r["selected"] for r in rows) == 1
    assert (tmp_path / "sweep.csv").read_text().startswith("rank,v_ref,rmse,mae,selected,error\n")


def test_ini_config_file(workdir, tmp_path):
    ini = tmp_path / "cfg.ini"
    ini.write_text("[synth]\ntotal_cycles = 12\nseed = 9\n")
    assert main(["-q", "synth", "-c", str(ini), "-o", str(tmp_path / "d")]) == 0
    assert (tmp_path / "d" / "labels.csv").read_text().count("\n") == 13


def test_unknown_option_is_usage_error(capsys):
    assert main(["synth", "--bogus"]) == 2
    assert "category=usage" in capsys.readouterr().err


def test_unknown_config_key_is_validation_error(tmp_path, capsys):
    assert main(["synth", "-o", str(tmp_path), "--set", "synth.nope=1"]) == 3
    err = capsys.readouterr().err
    assert "category=validation" in err and "synth.nope" in err


def test_unknown_section_in_ini(tmp_path):
    ini = tmp_path / "cfg.ini"
    ini.write_text("[weird]\na = 1\n")
    assert main(["synth", "-c", str(ini), "-o", str(tmp_path)]) == 3


def test_missing_data_is_io_error(tmp_path, capsys):
    assert main(["profile", "-o", str(tmp_path), "--data", str(tmp_path / "none")]) == 4
    assert "category=io" in capsys.readouterr().err


def test_zero_epochs_is_validation_error(workdir, tmp_path):
    assert main(["train", "-o", str(tmp_path), "--data", str(workdir / "data"), "--epochs", "0"]) == 3


def test_error_line_is_single_line(tmp_path, capsys):
    main(["profile", "-o", str(tmp_path), "--data", str(tmp_path / "none")])
    lines = [l for l in capsys.readouterr().err.splitlines() if l.startswith("error ")]
    assert len(lines) == 1 and "type=" in lines[0] and "message=" in lines[0]
