import csv
import json

import pytest

from swarmkv.harness.cli import main

SMALL = """
[scenario]
name = tiny
seed = 1

[workload]
read_fraction = 0.5
keys = 3
clients = 2
ops_per_client = 15
distribution = uniform
"""


@pytest.fixture
def config(tmp_path):
    path = tmp_path / "tiny.ini"
    path.write_text(SMALL)
    return str(path)


def test_lists_builtin_scenarios(capsys):
    assert main(["scenarios"]) == 0
    assert "ycsb_b" in capsys.readouterr().out.split()


def test_run_writes_outputs_and_check_reads_them(config, tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["run", "--config", config, "--out", str(out)]) == 0
    assert "linearizability: ok" in capsys.readouterr().out
    assert json.loads((out / "metrics.json").read_text())["ops"] == 30
    assert main(["check", str(out / "history_kv.jsonl")]) == 0
    assert json.loads(capsys.readouterr().out)["level"] == "kv"
    report = tmp_path / "reg.json"
    assert main(["check", str(out / "history_registers.jsonl"), "--out", str(report)]) == 0
    assert json.loads(report.read_text())["level"] == "register"


def test_run_without_checking(config, capsys):
    assert main(["run", "--config", config, "--no-check", "--seed", "5"]) == 0
    assert "linearizability" not in capsys.readouterr().out


def test_abd_reports_both_protocols(config, capsys):
    assert main(["abd", "--config", config]) == 0
    assert "median update roundtrips: swarm 1" in capsys.readouterr().out


def test_sweep_writes_csv(config, tmp_path):
    assert main(["sweep", "--config", config, "--k", "1,2", "--seeds", "2", "--out", str(tmp_path)]) == 0
    rows = list(csv.DictReader(open(tmp_path / "sweep.csv")))
    assert [(r["k"], r["seed"]) for r in rows] == [("1", "0"), ("1", "1"), ("2", "0"), ("2", "1")]


def test_sweep_rejects_bad_slot_counts(config, capsys):
    assert main(["sweep", "--config", config, "--k", "0"]) == 2
    assert "error" in capsys.readouterr().err


def test_bad_config_exits_with_two(tmp_path, capsys):
    bad = tmp_path / "bad.ini"
    bad.write_text("[workload]\nkeys = lots\n")
    assert main(["run", "--config", str(bad)]) == 2
    assert "bad.ini:2:" in capsys.readouterr().err
    assert main(["run", "--config", str(tmp_path / "missing.ini")]) == 2
    assert main(["run"]) == 2


def test_suite_and_mutant(capsys):
    assert main(["suite", "--seeds", "3"]) == 0
    assert json.loads(capsys.readouterr().out)["runs"] == 3
    assert main(["suite", "--seeds", "1", "--mutant", "reader_skips_lock"]) == 0
