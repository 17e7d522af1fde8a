from __future__ import annotations

import pytest

from trajrepair.agent import Agent
from trajrepair.backends import PolicyModel, ScriptedRetriever
from trajrepair.diagnosis import Coverage, CoverageSource, CoverageValue, Diagnosis, ErrorType
from trajrepair.repair import (
    AblationMode,
    PlanParseError,
    RepairContext,
    RepairError,
    RepairOperatorId,
    ablation_repair,
    repair,
    repair_format,
    repair_reasoning,
    repair_retriever,
    repair_search,
    rerun_baseline,
    select_operator,
    stepwise_retry_baseline,
)
from trajrepair.trajectory import ActionKind

from conftest import fallback_docs, make_trajectory, repairer_reply

FULL = Coverage(CoverageValue.FULL, CoverageSource.JUDGE_MODEL)
PARTIAL = Coverage(CoverageValue.PARTIAL, CoverageSource.JUDGE_MODEL)


@pytest.fixture
def llm() -> PolicyModel:
    return PolicyModel(repairer_reply)


@pytest.fixture
def retriever() -> ScriptedRetriever:
    return ScriptedRetriever(fallback=fallback_docs)


@pytest.fixture
def ctx(llm, retriever) -> RepairContext:
    return RepairContext(llm, retriever)


def test_operator_selection() -> None:
    assert select_operator(ErrorType.FORMAT) is RepairOperatorId.ANSWER_REWRITE
    assert select_operator(ErrorType.REASONING) is RepairOperatorId.EVIDENCE_GROUNDED_REREASON
    assert select_operator(ErrorType.RETRIEVER) is RepairOperatorId.QUERY_REWRITE_TOPK
    assert select_operator(ErrorType.SEARCH) is RepairOperatorId.PLAN_BASED_REPAIR


def test_multiplier_must_widen() -> None:
    with pytest.raises(ValueError):
        RepairContext(None, None, top_k_multiplier=1)  # type: ignore[arg-type]


def test_answer_rewrite_keeps_body(llm) -> None:
    t = make_trajectory("RSIR")
    out = repair_format(t, llm)
    assert out.repaired.body == t.body
    assert out.new_predicted_answer == "right"
    assert (out.retrieval_calls, out.prefix_len) == (0, 4)


def test_rereason_keeps_prefix_and_skips_retrieval(llm) -> None:
    t = make_trajectory("RSISIR")
    out = repair_reasoning(t, 4, llm)
    assert out.repaired.actions[:3] == t.actions[:3]
    assert out.repaired.action(4).kind is ActionKind.REASON
    assert out.retrieval_calls == 0
    assert out.repaired.predicted_answer == "right"
    assert out.ledger.repair_tokens > 0 and out.ledger.diagnosis_tokens == 0


def test_rereason_sees_all_documents_even_after_k(llm) -> None:
    t = make_trajectory("RSIRSI")
    repair_reasoning(t, 4, llm)
    prompt = llm.requests[-1].prompt
    assert "text about d3" in prompt and "text about d6" in prompt


def test_rereason_rejects_answer_index(llm) -> None:
    t = make_trajectory("RSI")
    with pytest.raises(RepairError):
        repair_reasoning(t, 4, llm)


def test_rereason_budget_overflow_keeps_original_answer() -> None:
    t = make_trajectory("RSIR")
    llm = PolicyModel(lambda req, a: "\n".join(f"step {i}" for i in range(20)) + "\nANSWER[right]")
    out = repair_reasoning(t, 4, llm, max_suffix=3)
    assert out.new_predicted_answer == "wrong"
    assert "suffix_budget_exceeded_kept_original" in out.flags
    assert len(out.repaired.actions) == 3 + 2 + 1


def test_query_rewrite_widens_top_k(llm, retriever) -> None:
    t = make_trajectory("RSISIR")
    out = repair_retriever(t, 4, llm, retriever, base_top_k=5, multiplier=2)
    assert out.retrieval_top_ks == (10,)
    assert [r.query for r in retriever.requests] == ["better query 2"]
    assert out.repaired.actions[:3] == t.actions[:3]
    assert out.new_predicted_answer == "right"


def test_query_rewrite_without_earlier_queries_uses_question(llm, retriever) -> None:
    t = make_trajectory("RSI")
    out = repair_retriever(t, 1, llm, retriever)
    assert "no_prior_queries_rewrote_question" in out.flags
    assert out.retrieval_calls == 1


def test_plan_repair_executes_plan(llm, retriever) -> None:
    t = make_trajectory("RSIR")
    out = repair_search(t, 4, llm, retriever)
    kinds = [a.kind.value for a in out.repaired.actions[3:]]
    assert kinds == ["search", "information", "reason", "answer"]
    assert out.retrieval_calls == 1


def test_plan_repair_respects_budget(llm, retriever) -> None:
    t = make_trajectory("R")
    out = repair_search(t, 1, llm, retriever, max_suffix=2)
    assert "step_budget_exhausted" in out.flags
    assert len(out.repaired.actions) <= 2


def test_plan_parse_failure_after_retry(retriever) -> None:
    llm = PolicyModel(lambda req, a: "I would rather not plan.")
    with pytest.raises(PlanParseError):
        repair_search(make_trajectory("R"), 1, llm, retriever)
    assert len(llm.requests) == 2


def test_repair_books_diagnosis_cost(ctx) -> None:
    t = make_trajectory("RSIR")
    d = Diagnosis(ErrorType.REASONING, 4, FULL, diagnosis_tokens=77)
    out = repair(t, d, ctx)
    assert out.ledger.diagnosis_tokens == 77
    assert out.ledger.total_tokens() == 77 + out.ledger.repair_tokens


def test_no_localization_starts_from_scratch(ctx) -> None:
    t = make_trajectory("RSIR")
    d = Diagnosis(ErrorType.REASONING, 4, FULL)
    out = ablation_repair(t, d, AblationMode.NO_LOCALIZATION, ctx)
    assert out.prefix_len == 0
    assert out.operator == RepairOperatorId.EVIDENCE_GROUNDED_REREASON.value


def test_no_taxonomy_always_plans(ctx) -> None:
    t = make_trajectory("RSIR")
    d = Diagnosis(ErrorType.FORMAT, 5, FULL)
    out = ablation_repair(t, d, AblationMode.NO_TAXONOMY, ctx)
    assert out.operator == RepairOperatorId.PLAN_BASED_REPAIR.value


def test_rerun_regenerates_everything(llm, retriever) -> None:
    t = make_trajectory("RSIR")
    out = rerun_baseline(t, Agent(llm, retriever))
    assert out.prefix_len == 0
    assert out.new_predicted_answer == "right"
    assert out.repaired.gold_answer == t.gold_answer


def test_stepwise_keeps_prefix_before_first_rejected_step(retriever) -> None:
    def policy(req, attempt):
        if req.template == "verify-step":
            return "no" if req.salient[1] == "4" else "yes"
        return repairer_reply(req, attempt)

    llm = PolicyModel(policy)
    t = make_trajectory("RSIRSIR")
    out = stepwise_retry_baseline(t, llm, Agent(llm, retriever))
    assert out.prefix_len == 3
    assert out.repaired.actions[:3] == t.actions[:3]
    assert out.ledger.diagnosis_tokens > 0
    assert out.ledger.repair_tokens > 0
