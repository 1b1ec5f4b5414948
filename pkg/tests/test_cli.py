import json

import pytest

from faultstab.cli import main

SMALL = ["--n-grid", "5", "--K", "3", "--quad-order", "4", "--cells", "2"]


def run(args):
    return main([str(a) for a in args])


def test_gen_byte_identical(tmp_path):
    for name in ("a.csv", "b.csv"):
        assert run(["gen", "--count", 6, "--q", 2, "--seed", 7, "--output", tmp_path / name, *SMALL]) == 0
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_gen_echoes_config(tmp_path, capsys):
    run(["gen", "--count", 2, "--q", 2, "--out-dir", tmp_path, *SMALL])
    out = capsys.readouterr().out
    line = next(l for l in out.splitlines() if l.startswith("# faultstab gen config"))
    cfg = json.loads(line.split("config ", 1)[1])
    assert cfg["count"] == 2 and cfg["K"] == 3 and cfg["out_dir"] == str(tmp_path)
    assert "count=2 q=2 seed=0" in out


def test_invalid_box_exit_2(tmp_path, capsys):
    code = run(["gen", "--count", 2, "--d-min", -5, "--d-max", -50, "--out-dir", tmp_path])
    assert code == 2
    assert "d_min" in capsys.readouterr().err


def test_missing_required_flag(capsys):
    assert run(["gen", "--q", 3]) == 2
    err = capsys.readouterr().err
    assert "usage:" in err and "--count" in err


def test_unknown_flag_is_usage_error():
    with pytest.raises(SystemExit) as exc:
        main(["gen", "--bogus"])
    assert exc.value.code == 2


def test_config_file_and_override(tmp_path, capsys):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"gen": {"count": 3, "q": 2, "seed": 5, "n_grid": 5, "K": 3,
                                       "quad_order": 4, "cells": 2}}))
    assert run(["gen", "--config", cfg, "--seed", 6, "--out-dir", tmp_path]) == 0
    echoed = json.loads(capsys.readouterr().out.splitlines()[0].split("config ", 1)[1])
    assert echoed["count"] == 3 and echoed["seed"] == 6


def test_config_unknown_key(tmp_path):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"cuont": 3}))
    assert run(["gen", "--config", cfg, "--count", 1]) == 2


def test_env_output_dir(tmp_path, monkeypatch):
    monkeypatch.setenv("FAULTSTAB_OUTPUT_DIR", str(tmp_path / "env"))
    assert run(["gen", "--count", 1, "--q", 2, *SMALL]) == 0
    assert list((tmp_path / "env").glob("*.csv"))


def test_numerical_failure_exit_3(tmp_path):
    # without the cutoff a box reaching the surface cannot be assembled
    code = run(["gen", "--count", 1, "--q", 2, "--no-cutoff", "--out-dir", tmp_path, *SMALL])
    assert code == 3


def test_train_eval_report(tmp_path, capsys):
    d = tmp_path
    assert run(["gen", "--count", 40, "--q", 2, "--seed", 1, "--output", d / "train.csv", *SMALL]) == 0
    assert run(["gen", "--count", 10, "--q", 2, "--seed", 1, "--start", 40, "--output", d / "test.csv",
                *SMALL]) == 0
    assert run(["train", "--train", d / "train.csv", "--hidden", "6,4", "--iters", 20,
                "--out-dir", d]) == 0
    assert (d / "model.bin").exists() and (d / "loss_trace.csv").exists()
    assert run(["eval", "--model", d / "model.bin", "--bank", d / "train.csv", "--test", d / "test.csv",
                "--s0-size", 10, "--include-oracle", "--out-dir", d]) == 0
    rows = (d / "table.csv").read_text().splitlines()
    assert rows[0] == "method,error,load_time,run_time"
    assert [r.split(",")[0] for r in rows[1:]] == ["N", "S", "S0", "oracle"]
    assert float(rows[-1].split(",")[1]) == 0.0
    for p in "abd":
        svg = (d / f"hist_{p}.svg").read_text()
        assert svg.startswith("<svg") and svg.count("<rect") > 2
    assert run(["report", "--out-dir", d]) == 0
    assert "method comparison" in (d / "report.txt").read_text()


def test_eval_s0_larger_than_bank(tmp_path):
    d = tmp_path
    run(["gen", "--count", 5, "--q", 2, "--output", d / "t.csv", *SMALL])
    run(["train", "--train", d / "t.csv", "--hidden", "2", "--iters", 2, "--out-dir", d])
    assert run(["eval", "--model", d / "model.bin", "--bank", d / "t.csv", "--test", d / "t.csv",
                "--s0-size", 50, "--out-dir", d]) == 2


def test_stability_small(tmp_path, capsys):
    args = ["stability", "--trials", 4, "--K", 3, "--dense-n", 9, "--discrete-n", 5, "--quad-order", 4,
            "--cells", 2, "--q", 2, "--pilot", 2, "--out-dir", tmp_path]
    assert run(args) == 0
    text = (tmp_path / "stability_report.txt").read_text()
    c_hat = float(next(l for l in text.splitlines() if l.startswith("c_hat=")).split("=")[1])
    assert c_hat > 0
    assert (tmp_path / "stability_trials.csv").exists() and (tmp_path / "stability_hist.svg").exists()


def test_stability_rejects_unnested_grids(tmp_path):
    assert run(["stability", "--dense-n", 10, "--discrete-n", 4, "--out-dir", tmp_path]) == 2


def test_quadcheck(tmp_path, capsys):
    assert run(["quadcheck", "--K", 3, "--quad-order", 4, "--cells", 2, "--out-dir", tmp_path]) == 0
    out = capsys.readouterr().out
    assert "slope[cos]=" in out
    rows = (tmp_path / "quadcheck.csv").read_text().splitlines()
    assert len(rows) == 1 + 2 * 4


def test_report_without_outputs(tmp_path):
    assert run(["report", "--out-dir", tmp_path]) == 2
