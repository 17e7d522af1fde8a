"""Diagnosis-conditioned repair operators with prefix reuse, plus the rerun and
step-wise retry baselines and the two ablation modes."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Any, Sequence

from .agent import Agent
from .backends.base import ModelHandle, RetrievalRequest, RetrieverHandle, Tally
from .diagnosis import Diagnosis, ErrorType
from .parsing import clean_line, extract_answer, parse_plan, parse_reasoning, parse_yes_no
from .prompts import PromptBook, default_prompts, format_action, format_actions, format_documents
from .trajectory import (
    Action,
    ActionKind,
    CostLedger,
    Document,
    Trajectory,
    aggregate_documents,
    collect_queries,
    dedupe_documents,
    prefix,
)

log = logging.getLogger(__name__)

DEFAULT_SUFFIX_BUDGET = 10


class RepairError(RuntimeError):
    pass


class PlanParseError(RepairError):
    pass


class RepairOperatorId(str, Enum):
    ANSWER_REWRITE = "AnswerRewrite"
    EVIDENCE_GROUNDED_REREASON = "EvidenceGroundedReReason"
    QUERY_REWRITE_TOPK = "QueryRewriteTopK"
    PLAN_BASED_REPAIR = "PlanBasedRepair"


class AblationMode(str, Enum):
    NO_TAXONOMY = "NoTaxonomy"
    NO_LOCALIZATION = "NoLocalization"


_SELECTION = {
    ErrorType.FORMAT: RepairOperatorId.ANSWER_REWRITE,
    ErrorType.REASONING: RepairOperatorId.EVIDENCE_GROUNDED_REREASON,
    ErrorType.RETRIEVER: RepairOperatorId.QUERY_REWRITE_TOPK,
    ErrorType.SEARCH: RepairOperatorId.PLAN_BASED_REPAIR,
}


def select_operator(c: ErrorType) -> RepairOperatorId:
    return _SELECTION[c]


@dataclass(frozen=True)
class RepairOutcome:
    repaired: Trajectory
    operator: str
    ledger: CostLedger
    prefix_len: int
    retrieval_calls: int
    new_predicted_answer: str
    flags: tuple[str, ...] = ()
    retrieval_top_ks: tuple[int, ...] = ()

    def summary(self) -> dict[str, Any]:
        return {
            "operator": self.operator,
            "prefix_len": self.prefix_len,
            "retrieval_calls": self.retrieval_calls,
            "new_predicted_answer": self.new_predicted_answer,
            "ledger": self.ledger.to_json(),
            "flags": list(self.flags),
        }


@dataclass
class RepairContext:
    """Handles and settings shared by every operator in a run."""

    llm: ModelHandle
    retriever: RetrieverHandle
    base_top_k: int = 5
    top_k_multiplier: int = 2
    max_steps: int = DEFAULT_SUFFIX_BUDGET
    prompts: PromptBook | None = None
    judge: ModelHandle | None = None

    def __post_init__(self) -> None:
        if self.top_k_multiplier < 2:
            raise ValueError("top_k_multiplier must be >= 2 so repair retrieval widens top-k")
        if self.base_top_k < 1 or self.max_steps < 1:
            raise ValueError("base_top_k and max_steps must be >= 1")

    @property
    def agent(self) -> Agent:
        return Agent(self.llm, self.retriever, self.max_steps, self.base_top_k, self.prompts)


def _finish(
    t: Trajectory,
    actions: Sequence[Action],
    operator: str,
    tally: Tally,
    prefix_len: int,
    flags: Sequence[str] = (),
    diagnosis_tokens: int = 0,
    check_prefix: bool = True,
) -> RepairOutcome:
    repaired = t.with_actions(actions, repair_flags=list(flags)) if flags else t.with_actions(actions)
    if check_prefix and repaired.actions[:prefix_len] != t.actions[:prefix_len]:
        raise RepairError(f"{t.id}: {operator} altered the retained prefix")
    ledger = CostLedger(
        diagnosis_tokens=diagnosis_tokens,
        repair_tokens=tally.tokens - diagnosis_tokens,
        retrieval_calls=tally.retrieval_calls,
    )
    return RepairOutcome(
        repaired=repaired,
        operator=operator,
        ledger=ledger,
        prefix_len=prefix_len,
        retrieval_calls=tally.retrieval_calls,
        new_predicted_answer=repaired.predicted_answer,
        flags=tuple(flags),
        retrieval_top_ks=tuple(tally.retrieval_top_ks),
    )


def _answer_from(text: str) -> str:
    tagged = extract_answer(text)
    return tagged if tagged is not None else clean_line(text)


# -- operators ---------------------------------------------------------------


def repair_format(
    t: Trajectory, llm: ModelHandle, *, prompts: PromptBook | None = None, tally: Tally | None = None
) -> RepairOutcome:
    """Rewrite only the terminal answer; reasoning and retrieval stay untouched."""
    prompts = prompts or default_prompts()
    tally = tally if tally is not None else Tally()
    req = prompts.request(
        "answer-rewrite",
        [t.id],
        max_tokens=64,
        question=t.question,
        documents=format_documents(aggregate_documents(t)),
        answer=t.predicted_answer,
    )
    answer = _answer_from(tally.chat(llm, req).text)
    flags = []
    if not answer:
        answer = t.predicted_answer
        flags.append("empty_rewrite_kept_original")
    return _finish(t, (*t.body, Action.answer(answer)), RepairOperatorId.ANSWER_REWRITE.value, tally, t.K, flags)


def repair_reasoning(
    t: Trajectory,
    k_dagger: int,
    llm: ModelHandle,
    *,
    max_suffix: int = DEFAULT_SUFFIX_BUDGET,
    prompts: PromptBook | None = None,
    tally: Tally | None = None,
) -> RepairOutcome:
    """Keep actions before ``k_dagger`` and re-reason over all retrieved documents, without retrieval."""
    if not 1 <= k_dagger <= t.K:
        raise RepairError(f"{t.id}: re-reasoning needs 1 <= k_dagger <= K={t.K}, got {k_dagger}")
    prompts = prompts or default_prompts()
    tally = tally if tally is not None else Tally()
    kept = prefix(t, k_dagger)
    req = prompts.request(
        "rereason",
        [t.id, k_dagger],
        question=t.question,
        prefix=format_actions(kept),
        documents=format_documents(aggregate_documents(t)),
    )
    steps, answer = parse_reasoning(tally.chat(llm, req).text)
    flags = []
    if answer is None:
        answer = t.predicted_answer
        flags.append("no_tagged_answer_kept_original")
    if len(steps) + 1 > max_suffix:
        steps = steps[: max_suffix - 1]
        answer = t.predicted_answer
        flags.append("suffix_budget_exceeded_kept_original")
    actions = (*kept, *(Action.reason(s) for s in steps), Action.answer(answer))
    return _finish(t, actions, RepairOperatorId.EVIDENCE_GROUNDED_REREASON.value, tally, k_dagger - 1, flags)


def repair_retriever(
    t: Trajectory,
    k_dagger: int,
    llm: ModelHandle,
    retriever: RetrieverHandle,
    base_top_k: int = 5,
    multiplier: int = 2,
    *,
    prompts: PromptBook | None = None,
    tally: Tally | None = None,
) -> RepairOutcome:
    """Rewrite every earlier query, retrieve each with a widened top-k, answer once."""
    if multiplier < 2:
        raise RepairError("multiplier must be >= 2")
    prompts = prompts or default_prompts()
    tally = tally if tally is not None else Tally()
    kept = prefix(t, k_dagger)
    queries = collect_queries(t, k_dagger)
    flags = []
    if not queries:
        queries = [t.question]
        flags.append("no_prior_queries_rewrote_question")
    top_k = base_top_k * multiplier
    added: list[Action] = []
    new_docs: list[Document] = []
    for q in queries:
        req = prompts.request("query-rewrite", [t.id, q], max_tokens=64, question=t.question, query=q)
        rewritten = clean_line(tally.chat(llm, req).text)
        if not rewritten:
            rewritten = q
            flags.append("empty_query_rewrite")
        reply = tally.search(retriever, RetrievalRequest(rewritten, top_k))
        added += [Action.search(rewritten), Action.information(reply.docs)]
        new_docs += reply.docs
    req = prompts.request(
        "retrieval-answer",
        [t.id, k_dagger],
        max_tokens=64,
        question=t.question,
        prefix=format_actions(kept),
        documents=format_documents(dedupe_documents(new_docs)),
    )
    answer = _answer_from(tally.chat(llm, req).text)
    if not answer:
        answer = t.predicted_answer
        flags.append("empty_answer_kept_original")
    actions = (*kept, *added, Action.answer(answer))
    return _finish(t, actions, RepairOperatorId.QUERY_REWRITE_TOPK.value, tally, k_dagger - 1, flags)


def repair_search(
    t: Trajectory,
    k_dagger: int,
    llm: ModelHandle,
    retriever: RetrieverHandle,
    top_k: int = 5,
    *,
    max_suffix: int = DEFAULT_SUFFIX_BUDGET,
    prompts: PromptBook | None = None,
    tally: Tally | None = None,
) -> RepairOutcome:
    """Plan from the retained prefix, execute the plan, then answer."""
    prompts = prompts or default_prompts()
    tally = tally if tally is not None else Tally()
    kept = prefix(t, k_dagger)
    req = prompts.request(
        "plan", [t.id, k_dagger], question=t.question, prefix=format_actions(kept), max_steps=max_suffix - 1
    )
    steps, skipped = parse_plan(tally.chat(llm, req).text)
    if not steps:
        steps, skipped = parse_plan(tally.chat(llm, req).text)
        if not steps:
            raise PlanParseError(f"{t.id}: no parseable plan steps after retry")
    flags = [f"skipped_plan_lines={skipped}"] if skipped else []

    budget = max_suffix - 1  # one slot stays reserved for the answer
    added: list[Action] = []
    for i, (kind, content) in enumerate(steps, start=1):
        cost = 2 if kind == "SEARCH" else 1
        if len(added) + cost > budget:
            flags.append("step_budget_exhausted")
            break
        if kind == "SEARCH":
            reply = tally.search(retriever, RetrievalRequest(content, top_k))
            added += [Action.search(content), Action.information(reply.docs)]
        else:
            step_req = prompts.request(
                "plan-reason",
                [t.id, k_dagger, i],
                question=t.question,
                context=format_actions([*kept, *added]),
                step=content,
            )
            thought = " ".join(tally.chat(llm, step_req).text.split()) or content
            added.append(Action.reason(thought))
    answer_req = prompts.request(
        "plan-answer", [t.id, k_dagger], max_tokens=64, question=t.question, context=format_actions([*kept, *added])
    )
    answer = _answer_from(tally.chat(llm, answer_req).text)
    if not answer:
        answer = t.predicted_answer
        flags.append("empty_answer_kept_original")
    actions = (*kept, *added, Action.answer(answer))
    return _finish(t, actions, RepairOperatorId.PLAN_BASED_REPAIR.value, tally, k_dagger - 1, flags)


# -- dispatch ----------------------------------------------------------------


def apply_operator(
    t: Trajectory, operator: RepairOperatorId, k_dagger: int, ctx: RepairContext, tally: Tally
) -> RepairOutcome:
    if operator is RepairOperatorId.ANSWER_REWRITE:
        return repair_format(t, ctx.llm, prompts=ctx.prompts, tally=tally)
    if operator is RepairOperatorId.EVIDENCE_GROUNDED_REREASON:
        return repair_reasoning(t, k_dagger, ctx.llm, max_suffix=ctx.max_steps, prompts=ctx.prompts, tally=tally)
    if operator is RepairOperatorId.QUERY_REWRITE_TOPK:
        return repair_retriever(
            t, k_dagger, ctx.llm, ctx.retriever, ctx.base_top_k, ctx.top_k_multiplier, prompts=ctx.prompts, tally=tally
        )
    return repair_search(
        t, k_dagger, ctx.llm, ctx.retriever, ctx.base_top_k, max_suffix=ctx.max_steps, prompts=ctx.prompts, tally=tally
    )


def _with_diagnosis_cost(outcome: RepairOutcome, diagnosis: Diagnosis) -> RepairOutcome:
    ledger = CostLedger(
        diagnosis_tokens=outcome.ledger.diagnosis_tokens + diagnosis.diagnosis_tokens,
        repair_tokens=outcome.ledger.repair_tokens,
        retrieval_calls=outcome.ledger.retrieval_calls,
    )
    return RepairOutcome(
        outcome.repaired,
        outcome.operator,
        ledger,
        outcome.prefix_len,
        outcome.retrieval_calls,
        outcome.new_predicted_answer,
        outcome.flags,
        outcome.retrieval_top_ks,
    )


def repair(t: Trajectory, diagnosis: Diagnosis, ctx: RepairContext) -> RepairOutcome:
    """Apply the operator selected for the diagnosed error type at ``k_dagger``."""
    outcome = apply_operator(t, select_operator(diagnosis.error_type), diagnosis.k_dagger, ctx, Tally())
    return _with_diagnosis_cost(outcome, diagnosis)


def ablation_repair(t: Trajectory, diagnosis: Diagnosis, mode: AblationMode, ctx: RepairContext) -> RepairOutcome:
    """``NoTaxonomy``: plan-based repair at k_dagger regardless of type.
    ``NoLocalization``: the type's operator with k_dagger forced to 1."""
    mode = AblationMode(mode)
    if mode is AblationMode.NO_TAXONOMY:
        outcome = apply_operator(t, RepairOperatorId.PLAN_BASED_REPAIR, diagnosis.k_dagger, ctx, Tally())
    else:
        outcome = apply_operator(t, select_operator(diagnosis.error_type), 1, ctx, Tally())
    return _with_diagnosis_cost(outcome, diagnosis)


# -- baselines ---------------------------------------------------------------


def rerun_baseline(t: Trajectory, agent: Agent) -> RepairOutcome:
    """Discard the failed trajectory and run the agent again from the bare question."""
    tally = Tally()
    fresh = agent.run(t.question, base=t, tally=tally)
    return _finish(t, fresh.actions, "Rerun", tally, 0, fresh.meta.get("agent_flags", ()))


def stepwise_retry_baseline(
    t: Trajectory, judge: ModelHandle, agent: Agent, *, prompts: PromptBook | None = None
) -> RepairOutcome:
    """Verify reasoning steps in order; regenerate everything after the first rejected one."""
    prompts = prompts or default_prompts()
    tally = Tally()
    flags: list[str] = []
    first_invalid = t.K + 1
    for k, action in enumerate(t.body, start=1):
        if action.kind is not ActionKind.REASON:
            continue
        req = prompts.request(
            "verify-step",
            [t.id, k],
            max_tokens=8,
            question=t.question,
            history=format_actions(t.actions[: k - 1]),
            step=format_action(k, action),
        )
        verdict = parse_yes_no(tally.chat(judge, req).text)
        if verdict is None:
            verdict = parse_yes_no(tally.chat(judge, req).text)
        if verdict is None:
            flags.append(f"unparseable_verification@{k}")
        elif not verdict:
            first_invalid = k
            break
    verification_tokens = tally.tokens
    kept = prefix(t, first_invalid)
    fresh = agent.run(t.question, prefix=kept, base=t, tally=tally)
    flags += list(fresh.meta.get("agent_flags", ()))
    return _finish(t, fresh.actions, "Stepwise", tally, len(kept), flags, diagnosis_tokens=verification_tokens)
