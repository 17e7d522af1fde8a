"""Action-level trajectory model, JSONL (de)serialization and structural helpers.

Indices are 1-based: a trajectory with ``K`` non-terminal actions places its
terminal answer at index ``K + 1``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Iterable, Iterator, Sequence


class TrajectoryError(ValueError):
    """Base class for malformed trajectory input."""


class ParseError(TrajectoryError):
    """A record does not follow the trajectory JSONL schema."""

    def __init__(self, field_path: str, message: str) -> None:
        super().__init__(f"{field_path}: {message}")
        self.field_path = field_path


class InvariantError(TrajectoryError):
    """A structurally valid record violates a trajectory invariant."""


class IndexRangeError(IndexError):
    pass


class ActionKind(str, Enum):
    REASON = "reason"
    SEARCH = "search"
    INFORMATION = "information"
    ANSWER = "answer"


@dataclass(frozen=True)
class Document:
    doc_id: str
    title: str
    text: str
    score: float = 0.0

    def __post_init__(self) -> None:
        if not self.doc_id:
            raise InvariantError("document doc_id must be non-empty")

    def to_json(self) -> dict[str, Any]:
        return {"doc_id": self.doc_id, "title": self.title, "text": self.text, "score": self.score}


@dataclass(frozen=True)
class Action:
    """One trajectory step.

    ``payload`` is a string for reason/search/answer actions and a tuple of
    :class:`Document` for information actions.
    """

    kind: ActionKind
    payload: str | tuple[Document, ...]
    tokens: int = 0

    def __post_init__(self) -> None:
        if self.tokens < 0:
            raise InvariantError("action tokens must be >= 0")
        if self.kind is ActionKind.INFORMATION:
            if not isinstance(self.payload, tuple):
                raise InvariantError("information payload must be a tuple of documents")
            seen: set[str] = set()
            for doc in self.payload:
                if doc.doc_id in seen:
                    raise InvariantError(f"duplicate doc_id {doc.doc_id!r} in one information action")
                seen.add(doc.doc_id)
        else:
            if not isinstance(self.payload, str):
                raise InvariantError(f"{self.kind.value} payload must be a string")
            if self.kind is ActionKind.SEARCH and not self.payload.strip():
                raise InvariantError("search query must be non-empty")

    @classmethod
    def reason(cls, text: str, tokens: int | None = None) -> Action:
        return cls(ActionKind.REASON, text, approx_tokens(text) if tokens is None else tokens)

    @classmethod
    def search(cls, query: str, tokens: int | None = None) -> Action:
        return cls(ActionKind.SEARCH, query, approx_tokens(query) if tokens is None else tokens)

    @classmethod
    def information(cls, docs: Iterable[Document], tokens: int = 0) -> Action:
        return cls(ActionKind.INFORMATION, tuple(docs), tokens)

    @classmethod
    def answer(cls, text: str, tokens: int | None = None) -> Action:
        return cls(ActionKind.ANSWER, text, approx_tokens(text) if tokens is None else tokens)

    @property
    def text(self) -> str:
        if isinstance(self.payload, tuple):
            raise AttributeError("information actions carry documents, not text")
        return self.payload

    @property
    def docs(self) -> tuple[Document, ...]:
        if not isinstance(self.payload, tuple):
            return ()
        return self.payload

    def to_json(self) -> dict[str, Any]:
        out: dict[str, Any] = {"kind": self.kind.value}
        if self.kind is ActionKind.INFORMATION:
            out["docs"] = [d.to_json() for d in self.docs]
        elif self.kind is ActionKind.SEARCH:
            out["query"] = self.payload
        else:
            out["text"] = self.payload
        out["tokens"] = self.tokens
        return out


@dataclass(frozen=True)
class CostLedger:
    diagnosis_tokens: int = 0
    repair_tokens: int = 0
    retrieval_calls: int = 0
    wall_time_ms: int = 0

    def __post_init__(self) -> None:
        for name in ("diagnosis_tokens", "repair_tokens", "retrieval_calls", "wall_time_ms"):
            if getattr(self, name) < 0:
                raise InvariantError(f"{name} must be >= 0")

    def total_tokens(self) -> int:
        return self.diagnosis_tokens + self.repair_tokens

    def __add__(self, other: CostLedger) -> CostLedger:
        return CostLedger(
            self.diagnosis_tokens + other.diagnosis_tokens,
            self.repair_tokens + other.repair_tokens,
            self.retrieval_calls + other.retrieval_calls,
            self.wall_time_ms + other.wall_time_ms,
        )

    def to_json(self) -> dict[str, int]:
        return {
            "diagnosis_tokens": self.diagnosis_tokens,
            "repair_tokens": self.repair_tokens,
            "retrieval_calls": self.retrieval_calls,
            "wall_time_ms": self.wall_time_ms,
            "total_tokens": self.total_tokens(),
        }


@dataclass(frozen=True)
class Trajectory:
    id: str
    question: str
    actions: tuple[Action, ...]
    predicted_answer: str
    gold_answer: str | None = None
    gold_evidence: tuple[str, ...] | None = None
    meta: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        acts = self.actions
        for i, a in enumerate(acts):
            if a.kind is ActionKind.ANSWER and i != len(acts) - 1:
                raise InvariantError(f"answer action at index {i + 1} is not terminal")
        if acts and acts[-1].kind is ActionKind.ANSWER:
            if acts[-1].payload != self.predicted_answer:
                raise InvariantError("terminal mismatch: answer action payload differs from predicted_answer")

    @property
    def body(self) -> tuple[Action, ...]:
        """Non-terminal actions (indices 1..K)."""
        if self.actions and self.actions[-1].kind is ActionKind.ANSWER:
            return self.actions[:-1]
        return self.actions

    @property
    def K(self) -> int:
        return len(self.body)

    @property
    def answer_index(self) -> int:
        return self.K + 1

    def action(self, index: int) -> Action:
        """Return the action at 1-based ``index`` (``K + 1`` is the terminal answer)."""
        if not 1 <= index <= len(self.actions):
            raise IndexRangeError(f"action index {index} out of range 1..{len(self.actions)}")
        return self.actions[index - 1]

    def indexed(self) -> Iterator[tuple[int, Action]]:
        return enumerate(self.actions, start=1)

    def with_actions(self, actions: Sequence[Action], **meta_updates: Any) -> Trajectory:
        """Copy with a new action list; the predicted answer follows the terminal action."""
        actions = tuple(actions)
        answer = actions[-1].payload if actions and actions[-1].kind is ActionKind.ANSWER else ""
        meta = {**self.meta, **meta_updates} if meta_updates else dict(self.meta)
        return Trajectory(
            id=self.id,
            question=self.question,
            actions=actions,
            predicted_answer=answer,  # type: ignore[arg-type]
            gold_answer=self.gold_answer,
            gold_evidence=self.gold_evidence,
            meta=meta,
        )


def approx_tokens(text: str) -> int:
    return len(text.split())


def _check_k(t: Trajectory, k_dagger: int) -> None:
    if not isinstance(k_dagger, int) or not 1 <= k_dagger <= t.K + 1:
        raise IndexRangeError(f"k_dagger={k_dagger} out of range 1..{t.K + 1}")


def prefix(t: Trajectory, k_dagger: int) -> tuple[Action, ...]:
    """Actions strictly before ``k_dagger`` (the reusable, validated prefix)."""
    _check_k(t, k_dagger)
    return t.actions[: k_dagger - 1]


def aggregate_documents(t: Trajectory) -> tuple[Document, ...]:
    """Union of all retrieved documents, deduplicated by doc_id keeping the max score."""
    merged: dict[str, Document] = {}
    for a in t.actions:
        if a.kind is not ActionKind.INFORMATION:
            continue
        for d in a.docs:
            cur = merged.get(d.doc_id)
            if cur is None or d.score > cur.score:
                merged[d.doc_id] = d
    return tuple(merged.values())


def dedupe_documents(docs: Iterable[Document]) -> tuple[Document, ...]:
    merged: dict[str, Document] = {}
    for d in docs:
        cur = merged.get(d.doc_id)
        if cur is None or d.score > cur.score:
            merged[d.doc_id] = d
    return tuple(merged.values())


def collect_queries(t: Trajectory, k_dagger: int) -> list[str]:
    """Queries of every search action strictly before ``k_dagger``, in order."""
    _check_k(t, k_dagger)
    return [a.payload for a in t.actions[: k_dagger - 1] if a.kind is ActionKind.SEARCH]  # type: ignore[misc]


# -- serialization -----------------------------------------------------------

_PAYLOAD_FIELD = {
    ActionKind.REASON: "text",
    ActionKind.ANSWER: "text",
    ActionKind.SEARCH: "query",
    ActionKind.INFORMATION: "docs",
}


def _expect(obj: dict[str, Any], key: str, types: type | tuple[type, ...], path: str, optional: bool = False) -> Any:
    if key not in obj:
        if optional:
            return None
        raise ParseError(f"{path}.{key}" if path else key, "missing required field")
    value = obj[key]
    if value is None and optional:
        return None
    if not isinstance(value, types) or (isinstance(value, bool) and bool not in _as_tuple(types)):
        raise ParseError(f"{path}.{key}" if path else key, f"expected {_type_names(types)}, got {type(value).__name__}")
    return value


def _as_tuple(types: type | tuple[type, ...]) -> tuple[type, ...]:
    return types if isinstance(types, tuple) else (types,)


def _type_names(types: type | tuple[type, ...]) -> str:
    return "|".join(t.__name__ for t in _as_tuple(types))


def _parse_document(obj: Any, path: str) -> Document:
    if not isinstance(obj, dict):
        raise ParseError(path, "expected object")
    doc_id = _expect(obj, "doc_id", str, path)
    if not doc_id:
        raise ParseError(f"{path}.doc_id", "must be non-empty")
    return Document(
        doc_id=doc_id,
        title=_expect(obj, "title", str, path),
        text=_expect(obj, "text", str, path),
        score=float(_expect(obj, "score", (int, float), path)),
    )


def _parse_action(obj: Any, path: str) -> tuple[Action, bool]:
    if not isinstance(obj, dict):
        raise ParseError(path, "expected object")
    raw_kind = _expect(obj, "kind", str, path)
    try:
        kind = ActionKind(raw_kind)
    except ValueError:
        raise ParseError(f"{path}.kind", f"unknown action kind {raw_kind!r}") from None
    wanted = _PAYLOAD_FIELD[kind]
    present = [f for f in ("text", "query", "docs") if f in obj]
    if present != [wanted]:
        raise ParseError(path, f"{kind.value} action needs exactly the {wanted!r} payload field, found {present}")
    payload: str | tuple[Document, ...]
    if kind is ActionKind.INFORMATION:
        docs = _expect(obj, "docs", list, path)
        payload = tuple(_parse_document(d, f"{path}.docs[{i}]") for i, d in enumerate(docs))
        ids = [d.doc_id for d in payload]
        if len(set(ids)) != len(ids):
            raise ParseError(f"{path}.docs", "duplicate doc_id within one information action")
    else:
        payload = _expect(obj, wanted, str, path)
        if kind is ActionKind.SEARCH and not payload.strip():
            raise ParseError(f"{path}.query", "must be non-empty")
    tokens = _expect(obj, "tokens", int, path, optional=True)
    approximated = tokens is None
    if tokens is None:
        if kind is ActionKind.INFORMATION:
            tokens = 0
        else:
            tokens = approx_tokens(payload)  # type: ignore[arg-type]
    if tokens < 0:
        raise ParseError(f"{path}.tokens", "must be >= 0")
    return Action(kind, payload, tokens), approximated


def parse_trajectory(record: Any) -> Trajectory:
    """Build a :class:`Trajectory` from one decoded JSONL record.

    Missing per-action token counts are filled with a whitespace approximation
    and ``meta["tokens_approximated"]`` is set.
    """
    if not isinstance(record, dict):
        raise ParseError("<record>", "expected JSON object")
    tid = _expect(record, "id", str, "")
    question = _expect(record, "question", str, "")
    gold_answer = _expect(record, "gold_answer", str, "", optional=True)
    raw_evidence = _expect(record, "gold_evidence", list, "", optional=True)
    gold_evidence: tuple[str, ...] | None = None
    if raw_evidence is not None:
        for i, e in enumerate(raw_evidence):
            if not isinstance(e, str):
                raise ParseError(f"gold_evidence[{i}]", "expected str")
        gold_evidence = tuple(raw_evidence)
    raw_actions = _expect(record, "actions", list, "")
    predicted = _expect(record, "predicted_answer", str, "")
    meta = _expect(record, "meta", dict, "", optional=True) or {}

    actions = []
    approximated = False
    for i, raw in enumerate(raw_actions):
        action, approx = _parse_action(raw, f"actions[{i}]")
        actions.append(action)
        approximated |= approx
    if approximated:
        meta = {**meta, "tokens_approximated": True}
    try:
        return Trajectory(
            id=tid,
            question=question,
            actions=tuple(actions),
            predicted_answer=predicted,
            gold_answer=gold_answer,
            gold_evidence=gold_evidence,
            meta=dict(meta),
        )
    except InvariantError:
        raise
    except TrajectoryError as exc:  # pragma: no cover - defensive
        raise InvariantError(str(exc)) from exc


def serialize_trajectory(t: Trajectory) -> dict[str, Any]:
    return {
        "id": t.id,
        "question": t.question,
        "gold_answer": t.gold_answer,
        "gold_evidence": list(t.gold_evidence) if t.gold_evidence is not None else None,
        "actions": [a.to_json() for a in t.actions],
        "predicted_answer": t.predicted_answer,
        "meta": t.meta,
    }
