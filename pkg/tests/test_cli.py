from __future__ import annotations

import json
import subprocess
import sys
from pathlib import Path

import pytest

from trajrepair.cli import main
from trajrepair.harness import write_jsonl
from trajrepair.simulate import injected_fixture_set, synthetic_clean_set

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture
def pulandian_jsonl(tmp_path) -> Path:
    path = tmp_path / "pulandian.jsonl"
    path.write_text(json.dumps(json.loads((FIXTURES / "pulandian.json").read_text())) + "\n")
    return path


@pytest.fixture
def script_config(tmp_path) -> Path:
    path = tmp_path / "script.ini"
    path.write_text(f"[backend]\nbackend = script\nscript_path = {FIXTURES / 'pulandian_script.json'}\n")
    return path


def test_validate(pulandian_jsonl, capsys) -> None:
    assert main(["validate", str(pulandian_jsonl)]) == 0
    assert "ok: 1" in capsys.readouterr().out


def test_validate_reports_bad_line(tmp_path, pulandian_jsonl, capsys) -> None:
    bad = tmp_path / "bad.jsonl"
    bad.write_text(pulandian_jsonl.read_text() + '{"id": "x"}\n')
    assert main(["validate", str(bad)]) == 1
    assert "line 2" in capsys.readouterr().err


def test_unknown_flag_exits_with_usage(capsys) -> None:
    with pytest.raises(SystemExit) as err:
        main(["validate", "x", "--frobnicate"])
    assert err.value.code == 1
    assert "usage:" in capsys.readouterr().err


def test_diagnose_with_scripted_backend(pulandian_jsonl, script_config, tmp_path) -> None:
    out = tmp_path / "d.jsonl"
    assert main(["diagnose", str(pulandian_jsonl), "--config", str(script_config), "--coverage", "oracle", "--out", str(out)]) == 0
    row = json.loads(out.read_text())
    assert row["diagnosis"]["error_type"] == "ReasoningError"
    assert row["diagnosis"]["k_dagger"] == 6


def test_diagnose_script_miss_is_a_backend_failure(pulandian_jsonl, script_config) -> None:
    empty = script_config.parent / "empty.json"
    empty.write_text("{}")
    cfg = script_config.parent / "empty.ini"
    cfg.write_text(f"backend = script\nscript_path = {empty}\n")
    assert main(["diagnose", str(pulandian_jsonl), "--config", str(cfg)]) == 2


def test_repair_writes_outputs(pulandian_jsonl, script_config, tmp_path) -> None:
    out = tmp_path / "out"
    code = main(
        ["repair", str(pulandian_jsonl), "--strategy", "drrag", "--config", str(script_config), "--out-dir", str(out)]
    )
    assert code == 0
    repaired = json.loads((out / "repaired.jsonl").read_text())
    assert repaired["predicted_answer"] == "Pulandian District"
    outcome = json.loads((out / "outcomes.jsonl").read_text())
    assert outcome["operator"] == "EvidenceGroundedReReason"
    assert outcome["ledger"]["retrieval_calls"] == 0


def test_inject_is_deterministic(tmp_path) -> None:
    clean = tmp_path / "clean.jsonl"
    write_jsonl(clean, synthetic_clean_set(5))
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    for out in (a, b):
        assert main(["inject", str(clean), "--type", "search", "--seed", "4", "--out", str(out)]) == 0
    assert a.read_bytes() == b.read_bytes()
    assert len(a.read_text().splitlines()) == 5


def test_eval_simulated(tmp_path, capsys) -> None:
    data = tmp_path / "fx.jsonl"
    write_jsonl(data, injected_fixture_set(2))
    cfg = tmp_path / "sim.ini"
    cfg.write_text("[run]\nstrategy = oracle\n[backend]\nbackend = simulated\n")
    out = tmp_path / "report"
    assert main(["eval", str(data), "--config", str(cfg), "--out-dir", str(out)]) == 0
    assert "repair rate 100.0%" in capsys.readouterr().out
    for name in ("report.json", "summary.md", "per_type.csv", "confusion.csv", "repaired.jsonl", "outcomes.jsonl"):
        assert (out / name).exists()


def test_eval_backend_budget_exit_code(tmp_path, pulandian_jsonl) -> None:
    empty = tmp_path / "empty.json"
    empty.write_text("{}")
    cfg = tmp_path / "c.ini"
    cfg.write_text(f"backend = script\nscript_path = {empty}\nmax_backend_failures = 0\n")
    assert main(["eval", str(pulandian_jsonl), "--config", str(cfg), "--out-dir", str(tmp_path / "r")]) == 2
    assert (tmp_path / "r" / "report.json").exists()


def test_module_entry_point(pulandian_jsonl) -> None:
    proc = subprocess.run(
        [sys.executable, "-m", "trajrepair", "validate", str(pulandian_jsonl)], capture_output=True, text=True
    )
    assert proc.returncode == 0, proc.stderr
