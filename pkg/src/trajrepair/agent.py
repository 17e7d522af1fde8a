from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .parsing import parse_agent_turn
from .prompts import PromptBook, default_prompts, format_actions
from .trajectory import Action, ActionKind, Trajectory
from .backends.base import ModelHandle, RetrievalRequest, RetrieverHandle, Tally


def _fallback_answer(actions: Sequence[Action]) -> str:
    for a in reversed(actions):
        if a.kind is ActionKind.REASON and a.payload:
            return str(a.payload).strip().splitlines()[-1]
    return ""


def run_agent(
    question: str,
    llm: ModelHandle,
    retriever: RetrieverHandle,
    max_steps: int,
    *,
    top_k: int = 5,
    prefix: Sequence[Action] = (),
    key: str | None = None,
    base: Trajectory | None = None,
    tally: Tally | None = None,
    prompts: PromptBook | None = None,
) -> Trajectory:
    """ReAct-style loop: each model turn ends with ``SEARCH[q]`` or ``ANSWER[a]``.

    ``prefix`` seeds the history (used for suffix regeneration). ``base``
    supplies id, gold fields and meta for the returned trajectory.
    """
    if max_steps < 1:
        raise ValueError("max_steps must be >= 1")
    prompts = prompts or default_prompts()
    tally = tally if tally is not None else Tally()
    key = key or (base.id if base is not None else question)
    actions = list(prefix)
    flags: list[str] = []
    answer: str | None = None

    for _ in range(max_steps):
        req = prompts.request("agent", [key, len(actions)], question=question, history=format_actions(actions))
        turn = parse_agent_turn(tally.chat(llm, req).text)
        if turn is None:
            turn = parse_agent_turn(tally.chat(llm, req).text)
            if turn is None:
                flags.append("untagged_output")
                break
        if turn.thought:
            actions.append(Action.reason(turn.thought))
        if turn.tag == "ANSWER":
            answer = turn.value
            break
        actions.append(Action.search(turn.value))
        reply = tally.search(retriever, RetrievalRequest(turn.value, top_k))
        actions.append(Action.information(reply.docs))
    else:
        flags.append("step_budget_exhausted")

    if answer is None:
        answer = _fallback_answer(actions)
        flags.append("fallback_answer")
    actions.append(Action.answer(answer))

    meta = dict(base.meta) if base is not None else {}
    if flags:
        meta["agent_flags"] = flags
    else:
        meta.pop("agent_flags", None)
    return Trajectory(
        id=base.id if base is not None else key,
        question=question,
        actions=tuple(actions),
        predicted_answer=answer,
        gold_answer=base.gold_answer if base is not None else None,
        gold_evidence=base.gold_evidence if base is not None else None,
        meta=meta,
    )


@dataclass
class Agent:
    """Bundles the handles and settings the baselines regenerate with."""

    llm: ModelHandle
    retriever: RetrieverHandle
    max_steps: int = 10
    top_k: int = 5
    prompts: PromptBook | None = None

    def run(
        self,
        question: str,
        *,
        prefix: Sequence[Action] = (),
        base: Trajectory | None = None,
        tally: Tally | None = None,
    ) -> Trajectory:
        return run_agent(
            question,
            self.llm,
            self.retriever,
            self.max_steps,
            top_k=self.top_k,
            prefix=prefix,
            base=base,
            tally=tally,
            prompts=self.prompts,
        )
