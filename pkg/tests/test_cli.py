from __future__ import annotations

import csv
import hashlib
import json

import pytest

from ndpolymer import cli
from ndpolymer.errors import NumericalDiagnostic


def run_to(tmp_path, name, *argv):
    out = tmp_path / name
    code = cli.main([*argv, "--out", str(out)])
    return code, out


def test_identical_config_gives_identical_digest(tmp_path):
    argv = ("limits", "w", "--alpha", "1.6", "--d", "3", "--samples", "20", "--seed", "7")
    code_a, a = run_to(tmp_path, "a.csv", *argv)
    code_b, b = run_to(tmp_path, "b.csv", *argv)
    assert code_a == code_b == 0
    assert a.read_bytes() == b.read_bytes()
    rec_a = json.loads((tmp_path / "a.csv.runs.jsonl").read_text())
    rec_b = json.loads((tmp_path / "b.csv.runs.jsonl").read_text())
    assert rec_a["config_hash"] != rec_b["config_hash"]  # the output path is part of the config
    assert rec_a["outputs"][str(a)] == rec_b["outputs"][str(b)]
    assert rec_a["outputs"][str(a)] == hashlib.sha256(a.read_bytes()).hexdigest()


def test_different_seed_changes_output(tmp_path):
    _, a = run_to(tmp_path, "a.csv", "env", "sample", "--alpha", "1.5", "--r", "3", "--seed", "1")
    _, b = run_to(tmp_path, "b.csv", "env", "sample", "--alpha", "1.5", "--r", "3", "--seed", "2")
    assert a.read_bytes() != b.read_bytes()


def test_csv_columns_and_values(tmp_path):
    code, out = run_to(tmp_path, "m.csv", "model", "classify", "--d", "3", "--alpha", "2.5", "--gamma", "0.3")
    assert code == 0
    rows = list(csv.DictReader(out.open()))
    assert len(rows) == 1
    assert rows[0]["region"]
    assert float(rows[0]["alpha"]) == 2.5


def test_config_file_and_flag_override(tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("d: 3\nalpha: 2.5\ngamma: 0.9\n")
    code, out = run_to(tmp_path, "m.csv", "model", "classify", "--config", str(cfg), "--gamma", "0.3")
    assert code == 0
    row = next(csv.DictReader(out.open()))
    assert float(row["gamma"]) == 0.3 and row["d"] == "3"


def test_stdout_when_no_out(capsys):
    assert cli.main(["walk", "green", "--x", "[1, 0, 0]"]) == 0
    text = capsys.readouterr().out
    assert text.startswith("x,d,G,hit_probability")


def test_unknown_config_key_exits_2(tmp_path, capsys):
    cfg = tmp_path / "bad.yaml"
    cfg.write_text("alpah: 1.5\n")
    assert cli.main(["model", "classify", "--config", str(cfg)]) == 2
    assert "invalid configuration" in capsys.readouterr().err


def test_window_violation_exits_2(capsys):
    assert cli.main(["limits", "chi", "--alpha", "1.6", "--d", "5", "--samples", "1"]) == 2
    assert "violated: alpha > d/(d-2)" in capsys.readouterr().err


def test_bad_list_flag_exits_2():
    assert cli.main(["walk", "f", "--x", "[1, 0"]) == 2


def test_numerical_diagnostic_exits_3(monkeypatch, capsys):
    def broken(cfg):
        raise NumericalDiagnostic("quadrature failed")

    monkeypatch.setitem(cli.HANDLERS, ("model", "classify"), broken)
    assert cli.main(["model", "classify"]) == 3
    assert "numerical diagnostic" in capsys.readouterr().err


def test_every_subcommand_has_a_handler():
    for group, actions in cli.SUBCOMMANDS.items():
        if group == "verify":
            continue
        for action in actions:
            assert (group, action) in cli.HANDLERS


def test_unknown_subcommand_is_rejected():
    with pytest.raises(SystemExit) as err:
        cli.main(["model", "nonsense"])
    assert err.value.code == 2
