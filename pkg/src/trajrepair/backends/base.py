from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Protocol, runtime_checkable

from ..trajectory import Document


class BackendError(RuntimeError):
    """A model or retriever call failed."""

    def __init__(self, message: str, status: int | None = None, body: str = "") -> None:
        super().__init__(message)
        self.status = status
        self.body = body


class RetryableError(BackendError):
    """Transient failure (timeout, connection reset); safe to retry."""


class ReplyParseError(BackendError):
    """The backend answered, but the reply does not have the expected shape."""

    def __init__(self, path: str, message: str) -> None:
        super().__init__(f"malformed reply at {path}: {message}")
        self.path = path


class ScriptMissError(BackendError):
    """A scripted backend received a request it has no canned reply for."""

    def __init__(self, fingerprint: str) -> None:
        super().__init__(f"no scripted reply for fingerprint {fingerprint!r}")
        self.fingerprint = fingerprint


def normalize_salient(value: object) -> str:
    return " ".join(str(value).lower().split())


@dataclass(frozen=True)
class Usage:
    prompt_tokens: int = 0
    completion_tokens: int = 0

    def __post_init__(self) -> None:
        if self.prompt_tokens < 0 or self.completion_tokens < 0:
            raise ValueError("usage counts must be >= 0")

    @property
    def total(self) -> int:
        return self.prompt_tokens + self.completion_tokens


@dataclass(frozen=True)
class ModelRequest:
    """A chat request.

    ``template`` and ``salient`` do not go on the wire; they identify the
    request for scripted replay and for accounting.
    """

    messages: tuple[tuple[str, str], ...]
    temperature: float = 0.0
    max_tokens: int = 512
    model: str = ""
    template: str = ""
    salient: tuple[str, ...] = ()

    @property
    def fingerprint(self) -> str:
        return ":".join([self.template, *(normalize_salient(s) for s in self.salient)])

    @property
    def prompt(self) -> str:
        return "\n\n".join(content for _, content in self.messages)

    def wire_body(self, default_model: str = "") -> dict:
        return {
            "model": self.model or default_model,
            "messages": [{"role": role, "content": content} for role, content in self.messages],
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
        }


@dataclass(frozen=True)
class ModelReply:
    text: str
    usage: Usage = Usage()
    refused: bool = False


@dataclass(frozen=True)
class RetrievalRequest:
    query: str
    top_k: int

    def __post_init__(self) -> None:
        if self.top_k < 0:
            raise ValueError("top_k must be >= 0")


@dataclass(frozen=True)
class RetrievalReply:
    docs: tuple[Document, ...]

    @classmethod
    def ranked(cls, docs: list[Document] | tuple[Document, ...], top_k: int) -> RetrievalReply:
        """Sort by descending score (stable) and cut to ``top_k``."""
        ordered = sorted(docs, key=lambda d: -d.score)
        return cls(tuple(ordered[:top_k]))


@runtime_checkable
class ModelHandle(Protocol):
    def chat_complete(self, req: ModelRequest) -> ModelReply: ...


@runtime_checkable
class RetrieverHandle(Protocol):
    def retrieve(self, req: RetrievalRequest) -> RetrievalReply: ...


@dataclass
class CallRecord:
    fingerprint: str
    usage: Usage


@dataclass
class Tally:
    """Meters every model and retrieval call made on behalf of one operation."""

    tokens: int = 0
    retrieval_calls: int = 0
    model_calls: list[CallRecord] = field(default_factory=list)
    retrieval_top_ks: list[int] = field(default_factory=list)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    def chat(self, llm: ModelHandle, req: ModelRequest) -> ModelReply:
        reply = llm.chat_complete(req)
        with self._lock:
            self.tokens += reply.usage.total
            self.model_calls.append(CallRecord(req.fingerprint, reply.usage))
        return reply

    def search(self, retriever: RetrieverHandle, req: RetrievalRequest) -> RetrievalReply:
        reply = retriever.retrieve(req)
        if len(reply.docs) > req.top_k:
            raise BackendError(f"retriever returned {len(reply.docs)} docs for top_k={req.top_k}")
        with self._lock:
            self.retrieval_calls += 1
            self.retrieval_top_ks.append(req.top_k)
        return reply
