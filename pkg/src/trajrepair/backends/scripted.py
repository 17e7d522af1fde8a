"""Deterministic offline backends.

A :class:`Script` maps request fingerprints (template id plus normalized
salient variables, e.g. ``"sufficiency:q1"``) to canned replies. Repeated
requests with the same fingerprint walk through the reply list; the last
reply repeats once the list is exhausted.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Mapping, Union

from ..trajectory import Document, approx_tokens
from .base import (
    ModelReply,
    ModelRequest,
    RetrievalReply,
    RetrievalRequest,
    ScriptMissError,
    Usage,
    normalize_salient,
)

ReplyLike = Union[ModelReply, str, tuple]


def coerce_reply(value: ReplyLike, req: ModelRequest | None = None) -> ModelReply:
    """Accept a ModelReply, ``(text, (prompt, completion))`` or bare text.

    Bare text is charged with whitespace-token usage of prompt and reply.
    """
    if isinstance(value, ModelReply):
        return value
    if isinstance(value, tuple):
        text, usage = value
        return ModelReply(text, Usage(*usage))
    prompt_tokens = approx_tokens(req.prompt) if req is not None else 0
    return ModelReply(value, Usage(prompt_tokens, approx_tokens(value)))


def _reply_from_json(obj: Any) -> ModelReply:
    if isinstance(obj, str):
        return ModelReply(obj, Usage(0, approx_tokens(obj)))
    usage = obj.get("usage", [0, approx_tokens(obj["text"])])
    if isinstance(usage, dict):
        usage = [usage.get("prompt_tokens", 0), usage.get("completion_tokens", 0)]
    return ModelReply(obj["text"], Usage(int(usage[0]), int(usage[1])))


@dataclass
class Script:
    replies: dict[str, list[ModelReply]] = field(default_factory=dict)
    documents: dict[str, list[Document]] = field(default_factory=dict)
    seed: int = 0

    def add(self, fingerprint: str, *replies: ReplyLike) -> Script:
        self.replies.setdefault(fingerprint, []).extend(coerce_reply(r) for r in replies)
        return self

    def add_documents(self, query: str, docs: list[Document]) -> Script:
        self.documents[normalize_salient(query)] = list(docs)
        return self

    @classmethod
    def from_json(cls, data: Mapping[str, Any]) -> Script:
        replies = {}
        for fp, value in data.get("replies", {}).items():
            items = value if isinstance(value, list) else [value]
            replies[fp] = [_reply_from_json(v) for v in items]
        documents = {
            normalize_salient(q): [Document(d["doc_id"], d.get("title", ""), d.get("text", ""), float(d.get("score", 0.0))) for d in docs]
            for q, docs in data.get("documents", {}).items()
        }
        return cls(replies, documents, int(data.get("seed", 0)))

    @classmethod
    def load(cls, path: str | Path) -> Script:
        return cls.from_json(json.loads(Path(path).read_text()))

    def to_json(self) -> dict[str, Any]:
        return {
            "seed": self.seed,
            "replies": {
                fp: [{"text": r.text, "usage": [r.usage.prompt_tokens, r.usage.completion_tokens]} for r in rs]
                for fp, rs in self.replies.items()
            },
            "documents": {q: [d.to_json() for d in docs] for q, docs in self.documents.items()},
        }


class _Recorder:
    def __init__(self) -> None:
        self._lock = threading.Lock()
        self.requests: list[ModelRequest] = []

    def _record(self, req: ModelRequest) -> None:
        with self._lock:
            self.requests.append(req)

    def prompts(self) -> list[str]:
        with self._lock:
            return [r.prompt for r in self.requests]


class ScriptedModel(_Recorder):
    """Replays a :class:`Script`; every request is captured in ``requests``."""

    def __init__(self, script: Script) -> None:
        super().__init__()
        self.script = script
        self._cursor: dict[str, int] = {}

    def chat_complete(self, req: ModelRequest) -> ModelReply:
        self._record(req)
        fp = req.fingerprint
        replies = self.script.replies.get(fp)
        if not replies:
            raise ScriptMissError(fp)
        with self._lock:
            i = self._cursor.get(fp, 0)
            self._cursor[fp] = i + 1
        return replies[min(i, len(replies) - 1)]


class PolicyModel(_Recorder):
    """Answers each request with ``policy(request)``.

    The policy must be a pure function of the request for replay to be
    deterministic; per-fingerprint call counts are exposed via ``attempt``.
    """

    def __init__(self, policy: Callable[[ModelRequest, int], ReplyLike]) -> None:
        super().__init__()
        self.policy = policy
        self._cursor: dict[str, int] = {}

    def chat_complete(self, req: ModelRequest) -> ModelReply:
        self._record(req)
        with self._lock:
            attempt = self._cursor.get(req.fingerprint, 0)
            self._cursor[req.fingerprint] = attempt + 1
        return coerce_reply(self.policy(req, attempt), req)


class ScriptedRetriever:
    """Canned per-query result sets (queries matched after normalization)."""

    def __init__(
        self,
        documents: Mapping[str, list[Document]] | None = None,
        fallback: Callable[[RetrievalRequest], list[Document]] | None = None,
        strict: bool = True,
    ) -> None:
        self.documents = {normalize_salient(q): list(d) for q, d in (documents or {}).items()}
        self.fallback = fallback
        self.strict = strict
        self._lock = threading.Lock()
        self.requests: list[RetrievalRequest] = []

    @classmethod
    def from_script(cls, script: Script, strict: bool = True) -> ScriptedRetriever:
        return cls(script.documents, strict=strict)

    def retrieve(self, req: RetrievalRequest) -> RetrievalReply:
        with self._lock:
            self.requests.append(req)
        key = normalize_salient(req.query)
        if key in self.documents:
            docs = self.documents[key]
        elif self.fallback is not None:
            docs = self.fallback(req)
        elif self.strict:
            raise ScriptMissError(f"search:{key}")
        else:
            docs = []
        return RetrievalReply.ranked(docs, req.top_k)
