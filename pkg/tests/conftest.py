from __future__ import annotations

import json
import random
from pathlib import Path

import pytest
from hypothesis import strategies as st

from trajrepair.trajectory import Action, ActionKind, Document, Trajectory, parse_trajectory

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture
def pulandian() -> Trajectory:
    return parse_trajectory(json.loads((FIXTURES / "pulandian.json").read_text()))


@pytest.fixture
def pulandian_script_path() -> Path:
    return FIXTURES / "pulandian_script.json"


def doc(doc_id: str, text: str = "", score: float = 0.5) -> Document:
    return Document(doc_id, doc_id.title(), text or f"text about {doc_id}", score)


def make_trajectory(
    kinds: str,
    *,
    tid: str = "t1",
    answer: str = "wrong",
    gold: str | None = "right",
    evidence: tuple[str, ...] | None = None,
) -> Trajectory:
    """Build a trajectory from a compact kind string, e.g. ``"RSIRSIR"``.

    ``R`` reason, ``S`` search, ``I`` information (one doc named ``d<i>``).
    The terminal answer is appended.
    """
    actions = []
    for i, c in enumerate(kinds, start=1):
        if c == "R":
            actions.append(Action.reason(f"thought {i}"))
        elif c == "S":
            actions.append(Action.search(f"query {i}"))
        elif c == "I":
            actions.append(Action.information([doc(f"d{i}")]))
        else:
            raise ValueError(c)
    actions.append(Action.answer(answer))
    return Trajectory(tid, "which city?", tuple(actions), answer, gold, evidence)


def random_kinds(rng: random.Random, min_len: int = 1, max_len: int = 12) -> str:
    """Agent-shaped kind strings: each search is followed by its information action."""
    out = []
    n = rng.randint(min_len, max_len)
    while len(out) < n:
        if rng.random() < 0.5:
            out.append("R")
        else:
            out.extend("SI")
    return "".join(out)


_text = st.text(alphabet=st.characters(blacklist_categories=("Cs",)), max_size=30)
_nonblank = _text.filter(lambda s: s.strip() != "")


@st.composite
def documents(draw) -> Document:
    return Document(
        draw(st.text(min_size=1, max_size=8)),
        draw(_text),
        draw(_text),
        draw(st.floats(allow_nan=False, allow_infinity=False, width=32)),
    )


@st.composite
def actions(draw) -> Action:
    kind = draw(st.sampled_from([ActionKind.REASON, ActionKind.SEARCH, ActionKind.INFORMATION]))
    tokens = draw(st.integers(0, 10_000))
    if kind is ActionKind.INFORMATION:
        docs = draw(st.lists(documents(), max_size=4, unique_by=lambda d: d.doc_id))
        return Action(kind, tuple(docs), tokens)
    if kind is ActionKind.SEARCH:
        return Action(kind, draw(_nonblank), tokens)
    return Action(kind, draw(_text), tokens)


@st.composite
def trajectories(draw) -> Trajectory:
    body = draw(st.lists(actions(), max_size=8))
    answer = draw(_text)
    evidence = draw(st.one_of(st.none(), st.lists(st.text(min_size=1, max_size=6), max_size=3).map(tuple)))
    return Trajectory(
        draw(st.text(min_size=1, max_size=10)),
        draw(_text),
        (*body, Action(ActionKind.ANSWER, answer, draw(st.integers(0, 100)))),
        answer,
        draw(st.one_of(st.none(), _text)),
        evidence,
        {},
    )


def repairer_reply(req, attempt: int, answer: str = "right") -> str:
    """Well-formed replies for every repair-side template."""
    tpl = req.template
    if tpl in ("answer-rewrite", "retrieval-answer", "plan-answer"):
        return f"ANSWER[{answer}]"
    if tpl == "rereason":
        return f"The documents settle it.\nANSWER[{answer}]"
    if tpl == "query-rewrite":
        return f"better {req.salient[1]}"
    if tpl == "plan":
        return "1. SEARCH: missing fact\n2. REASON: combine the facts"
    if tpl == "plan-reason":
        return "combined"
    if tpl == "agent":
        return "need more\nSEARCH[fresh query]" if req.salient[1] == "0" else f"done\nANSWER[{answer}]"
    if tpl == "verify-step":
        return "yes"
    raise AssertionError(f"unexpected template {tpl}")


def fallback_docs(req) -> list[Document]:
    return [doc(f"r{i}", f"result {i} for {req.query}") for i in range(req.top_k)]


def pytest_terminal_summary(terminalreporter) -> None:
    import sys

    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        terminalreporter.write_line(results[n])
