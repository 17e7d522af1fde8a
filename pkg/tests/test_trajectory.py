from __future__ import annotations

import json

import pytest
from hypothesis import given, settings

from trajrepair.trajectory import (
    Action,
    CostLedger,
    Document,
    IndexRangeError,
    InvariantError,
    ParseError,
    Trajectory,
    aggregate_documents,
    collect_queries,
    parse_trajectory,
    prefix,
    serialize_trajectory,
)

from conftest import make_trajectory, trajectories


@settings(max_examples=1000, deadline=None)
@given(trajectories())
def test_serialize_parse_round_trip(t: Trajectory) -> None:
    wire = json.dumps(serialize_trajectory(t))
    back = parse_trajectory(json.loads(wire))
    assert back == t
    assert json.dumps(serialize_trajectory(back)) == wire


@settings(max_examples=200, deadline=None)
@given(trajectories(), trajectories())
def test_serialization_is_injective(a: Trajectory, b: Trajectory) -> None:
    if a != b:
        assert serialize_trajectory(a) != serialize_trajectory(b)


def test_indices_are_one_based_with_answer_at_k_plus_one() -> None:
    t = make_trajectory("RSI")
    assert t.K == 3
    assert t.answer_index == 4
    assert t.action(1).kind.value == "reason"
    assert t.action(4).text == "wrong"
    with pytest.raises(IndexRangeError):
        t.action(0)
    with pytest.raises(IndexRangeError):
        t.action(5)


def test_prefix_excludes_k_dagger() -> None:
    t = make_trajectory("RSIR")
    assert prefix(t, 1) == ()
    assert prefix(t, 3) == t.actions[:2]
    assert prefix(t, 5) == t.body
    with pytest.raises(IndexRangeError):
        prefix(t, 6)


def test_collect_queries_before_k() -> None:
    t = make_trajectory("RSISIR")
    assert collect_queries(t, 1) == []
    assert collect_queries(t, 4) == ["query 2"]
    assert collect_queries(t, 7) == ["query 2", "query 4"]


def test_aggregate_documents_dedupes_keeping_max_score() -> None:
    a = Document("x", "X", "first", 0.2)
    b = Document("y", "Y", "other", 0.9)
    c = Document("x", "X", "second", 0.7)
    t = Trajectory(
        "t", "q", (Action.information([a, b]), Action.information([c]), Action.answer("z")), "z"
    )
    docs = aggregate_documents(t)
    assert [d.doc_id for d in docs] == ["x", "y"]
    assert docs[0].text == "second"


def test_answer_must_be_terminal() -> None:
    with pytest.raises(InvariantError):
        Trajectory("t", "q", (Action.answer("a"), Action.reason("r")), "a")


def test_terminal_mismatch_rejected() -> None:
    with pytest.raises(InvariantError, match="terminal mismatch"):
        Trajectory("t", "q", (Action.answer("a"),), "b")


def test_duplicate_doc_ids_rejected() -> None:
    with pytest.raises(InvariantError):
        Action.information([Document("a", "", ""), Document("a", "", "")])


def test_empty_query_rejected() -> None:
    with pytest.raises(InvariantError):
        Action.search("   ")


def _record(**over):
    base = {
        "id": "r1",
        "question": "q?",
        "actions": [{"kind": "reason", "text": "think"}, {"kind": "answer", "text": "a"}],
        "predicted_answer": "a",
    }
    base.update(over)
    return base


def test_parse_marks_approximated_tokens() -> None:
    t = parse_trajectory(_record())
    assert t.meta["tokens_approximated"] is True
    assert t.action(1).tokens == 1
    exact = parse_trajectory(_record(actions=[{"kind": "answer", "text": "a", "tokens": 3}]))
    assert "tokens_approximated" not in exact.meta


@pytest.mark.parametrize(
    "record, path",
    [
        (_record(actions=[{"kind": "reason", "text": "x", "query": "y"}, {"kind": "answer", "text": "a"}]), "actions[0]"),
        (_record(actions=[{"kind": "teleport", "text": "x"}]), "actions[0].kind"),
        (_record(actions=[{"kind": "information", "docs": [{"doc_id": "d", "title": "t"}]}]), "actions[0].docs[0].text"),
        (_record(id=5), "id"),
        (_record(gold_evidence=["a", 3]), "gold_evidence[1]"),
    ],
)
def test_parse_errors_name_the_field(record, path) -> None:
    with pytest.raises(ParseError) as err:
        parse_trajectory(record)
    assert err.value.field_path == path


def test_cost_ledger_total_and_sum() -> None:
    a = CostLedger(10, 5, 1, 3)
    b = CostLedger(1, 2, 0, 4)
    assert (a + b).total_tokens() == 18
    assert (a + b).retrieval_calls == 1
    with pytest.raises(InvariantError):
        CostLedger(-1)
