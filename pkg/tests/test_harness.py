from __future__ import annotations

import json

import pytest

from trajrepair.backends import PolicyModel, ScriptedRetriever
from trajrepair.backends.base import BackendError
from trajrepair.harness import (
    BackendFatal,
    CoverageMode,
    Handles,
    RunConfig,
    Strategy,
    build_handles,
    emit_report,
    load_jsonl,
    run_pipeline,
    write_jsonl,
)
from trajrepair.simulate import injected_fixture_set, synthetic_clean_set
from trajrepair.trajectory import TrajectoryError

from conftest import fallback_docs, make_trajectory, repairer_reply


def test_strategy_parse_accepts_aliases() -> None:
    assert Strategy.parse("DrRag") is Strategy.DRRAG
    assert Strategy.parse("DrRagNoTaxonomy") is Strategy.NO_TAXONOMY
    assert Strategy.parse("no_localization") is Strategy.NO_LOCALIZATION
    with pytest.raises(ValueError):
        Strategy.parse("magic")


def test_config_file_env_and_override_precedence(tmp_path, monkeypatch) -> None:
    monkeypatch.setenv("LLM_MODEL", "from-env")
    monkeypatch.setenv("LLM_BASE_URL", "http://env")
    path = tmp_path / "run.ini"
    path.write_text("strategy = rerun\nbase_top_k = 3\nllm_model = from-file\nnoise_filter = yes\n")
    cfg = RunConfig.load(path, base_top_k=7)
    assert cfg.strategy is Strategy.RERUN
    assert cfg.base_top_k == 7
    assert cfg.llm_model == "from-file"
    assert cfg.llm_base_url == "http://env"
    assert cfg.noise_filter is True


def test_config_rejects_unknown_keys_and_bad_values(tmp_path) -> None:
    with pytest.raises(ValueError):
        RunConfig.from_mapping({"bogus": 1})
    with pytest.raises(ValueError):
        RunConfig(concurrency=0)
    with pytest.raises(ValueError):
        RunConfig(coverage_mode="sometimes")


def test_load_jsonl_reports_line_numbers(tmp_path) -> None:
    good = make_trajectory("R")
    path = tmp_path / "in.jsonl"
    write_jsonl(path, [good])
    with open(path, "a") as fh:
        fh.write("\n{not json}\n")
    with pytest.raises(TrajectoryError, match="line 3"):
        load_jsonl(path)


def _handles(policy=repairer_reply) -> Handles:
    def judged(req, attempt):
        if req.template == "sufficiency":
            return "yes"
        if req.template.startswith("classification"):
            return "ReasoningError"
        if req.template == "localization":
            return "yes"
        return policy(req, attempt)

    return Handles(PolicyModel(judged), ScriptedRetriever(fallback=fallback_docs))


def test_pipeline_passes_correct_instances_through() -> None:
    ts = [make_trajectory("RSIR", tid="ok", answer="right"), make_trajectory("RSIR", tid="bad")]
    report = run_pipeline(ts, RunConfig(strategy="drrag"), _handles())
    ok, bad = report.records
    assert not ok.failed and ok.outcome is None
    assert report.repaired[0] is ts[0]
    assert bad.corrected
    agg = report.aggregates()
    assert agg["repair_rate"] == 1.0 and agg["delta_em"] == 50.0


def test_errored_instances_count_as_not_corrected() -> None:
    ts = [make_trajectory("SI", tid="noreason"), make_trajectory("RSIR", tid="fine")]
    report = run_pipeline(ts, RunConfig(strategy="drrag"), _handles())
    agg = report.aggregates()
    assert agg["initially_failed"] == 2 and agg["corrected"] == 1 and agg["errored"] == 1
    assert "DegenerateInputError" in report.records[0].error


def test_backend_failure_budget_aborts_with_partial_report() -> None:
    def broken(req, attempt):
        raise BackendError("down")

    ts = [make_trajectory("RSIR", tid=f"t{i}") for i in range(5)]
    handles = Handles(PolicyModel(broken), ScriptedRetriever())
    with pytest.raises(BackendFatal) as err:
        run_pipeline(ts, RunConfig(max_backend_failures=1), handles)
    assert err.value.partial is not None
    assert 2 <= len(err.value.partial.records) <= 5
    report = run_pipeline(ts, RunConfig(max_backend_failures=10), handles)
    assert all(r.backend_failure for r in report.records)


def test_noise_filter_skips_unanswerable_questions() -> None:
    def policy(req, attempt):
        return "no" if req.template == "noise-screen" else repairer_reply(req, attempt)

    report = run_pipeline([make_trajectory("RSIR")], RunConfig(noise_filter=True), _handles(policy))
    assert report.records[0].skipped == "dataset_noise"
    assert report.aggregates()["skipped"] == 1


def test_repair_rounds_retry_until_correct() -> None:
    def policy(req, attempt):
        if req.template == "rereason":
            return "again\nANSWER[wrong]" if attempt == 0 else "fixed\nANSWER[right]"
        return repairer_reply(req, attempt)

    t = make_trajectory("RSIR")
    one = run_pipeline([t], RunConfig(max_repair_rounds=1), _handles(policy))
    assert not one.records[0].corrected
    two = run_pipeline([t], RunConfig(max_repair_rounds=3), _handles(policy))
    assert two.records[0].corrected and two.records[0].rounds == 2


def test_oracle_strategy_needs_labels() -> None:
    with pytest.raises(ValueError, match="injection labels"):
        run_pipeline([make_trajectory("RSIR")], RunConfig(strategy="oracle"), _handles())


def test_emitted_files(tmp_path) -> None:
    fixtures = injected_fixture_set(2)
    cfg = RunConfig(strategy="drrag", backend="simulated", judge_accuracy=0.8)
    report = run_pipeline(fixtures, cfg, build_handles(cfg, fixtures))
    paths = emit_report(report, tmp_path)
    data = json.loads(paths["report"].read_text())
    assert data["aggregates"]["initially_failed"] == 8
    assert len(load_jsonl(paths["repaired"])) == 8
    assert len(paths["outcomes"].read_text().splitlines()) == 8
    assert paths["summary"].read_text().count("| drrag |") == 1


def test_build_handles_script_backend(tmp_path, pulandian_script_path) -> None:
    with pytest.raises(ValueError):
        build_handles(RunConfig(backend="script"))
    handles = build_handles(RunConfig(backend="script", script_path=str(pulandian_script_path)))
    assert handles.judge is handles.llm


def test_clean_inputs_yield_zero_deltas() -> None:
    clean = synthetic_clean_set(4)
    report = run_pipeline(clean, RunConfig(coverage_mode=CoverageMode.ORACLE_EVIDENCE), _handles())
    agg = report.aggregates()
    assert agg["initially_failed"] == 0 and agg["delta_em"] == 0.0
