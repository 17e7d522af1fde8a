"""HTTP clients: OpenAI-compatible chat completions and a JSON search endpoint."""

from __future__ import annotations

import logging
import os
import time
from typing import Any

import httpx

from ..trajectory import Document
from .base import (
    BackendError,
    ModelReply,
    ModelRequest,
    ReplyParseError,
    RetrievalReply,
    RetrievalRequest,
    RetryableError,
    Usage,
)

log = logging.getLogger(__name__)

_EXCERPT = 300


def _post_json(
    client: httpx.Client, url: str, body: dict, headers: dict[str, str], retries: int, backoff_s: float
) -> Any:
    attempt = 0
    while True:
        try:
            resp = client.post(url, json=body, headers=headers)
        except (httpx.TimeoutException, httpx.TransportError) as exc:
            if attempt >= retries:
                raise RetryableError(f"POST {url} failed after {attempt + 1} attempts: {exc}") from exc
            delay = backoff_s * (2**attempt)
            log.warning("POST %s failed (%s); retrying in %.2fs", url, exc, delay)
            time.sleep(delay)
            attempt += 1
            continue
        if resp.status_code >= 400:
            raise BackendError(
                f"POST {url} returned HTTP {resp.status_code}: {resp.text[:_EXCERPT]}",
                status=resp.status_code,
                body=resp.text[:_EXCERPT],
            )
        try:
            return resp.json()
        except ValueError as exc:
            raise ReplyParseError("<body>", f"not JSON: {resp.text[:_EXCERPT]!r}") from exc


def _dig(data: Any, path: list[str | int]) -> Any:
    cur = data
    shown = ""
    for step in path:
        shown += f"[{step}]" if isinstance(step, int) else (f".{step}" if shown else step)
        try:
            cur = cur[step]
        except (KeyError, IndexError, TypeError):
            raise ReplyParseError(shown, "missing") from None
    return cur


def parse_chat_reply(data: Any) -> ModelReply:
    content = _dig(data, ["choices", 0, "message", "content"])
    if content is None:
        content = ""
    if not isinstance(content, str):
        raise ReplyParseError("choices[0].message.content", f"expected string, got {type(content).__name__}")
    usage_obj = data.get("usage") or {}
    if not isinstance(usage_obj, dict):
        raise ReplyParseError("usage", "expected object")
    try:
        usage = Usage(int(usage_obj.get("prompt_tokens", 0)), int(usage_obj.get("completion_tokens", 0)))
    except (TypeError, ValueError) as exc:
        raise ReplyParseError("usage", str(exc)) from None
    finish = _dig(data, ["choices", 0]).get("finish_reason")
    return ModelReply(content, usage, refused=(content == "" and finish == "content_filter"))


class OpenAICompatModel:
    """Chat client for ``POST {base_url}/v1/chat/completions``."""

    def __init__(
        self,
        base_url: str | None = None,
        model: str | None = None,
        api_key: str | None = None,
        timeout_s: float = 60.0,
        retries: int = 2,
        backoff_s: float = 0.5,
        transport: httpx.BaseTransport | None = None,
    ) -> None:
        base_url = base_url or os.environ.get("LLM_BASE_URL")
        if not base_url:
            raise BackendError("no model endpoint configured (set LLM_BASE_URL)")
        self.url = base_url.rstrip("/") + "/v1/chat/completions"
        self.model = model or os.environ.get("LLM_MODEL", "")
        self.api_key = api_key if api_key is not None else os.environ.get("LLM_API_KEY", "")
        self.retries = retries
        self.backoff_s = backoff_s
        # httpx.Client pools connections and is safe to share between threads
        self._client = httpx.Client(timeout=timeout_s, transport=transport)

    def chat_complete(self, req: ModelRequest) -> ModelReply:
        headers = {"Authorization": f"Bearer {self.api_key}"} if self.api_key else {}
        data = _post_json(self._client, self.url, req.wire_body(self.model), headers, self.retries, self.backoff_s)
        return parse_chat_reply(data)

    def close(self) -> None:
        self._client.close()


class HttpRetriever:
    """Client for ``POST {base_url}/search`` with body ``{"query", "top_k"}``."""

    def __init__(
        self,
        base_url: str | None = None,
        timeout_s: float = 30.0,
        retries: int = 2,
        backoff_s: float = 0.5,
        transport: httpx.BaseTransport | None = None,
    ) -> None:
        base_url = base_url or os.environ.get("RETRIEVER_BASE_URL")
        if not base_url:
            raise BackendError("no retriever endpoint configured (set RETRIEVER_BASE_URL)")
        self.url = base_url.rstrip("/") + "/search"
        self.retries = retries
        self.backoff_s = backoff_s
        self._client = httpx.Client(timeout=timeout_s, transport=transport)

    def retrieve(self, req: RetrievalRequest) -> RetrievalReply:
        if req.top_k == 0:
            return RetrievalReply(())
        data = _post_json(
            self._client, self.url, {"query": req.query, "top_k": req.top_k}, {}, self.retries, self.backoff_s
        )
        results = _dig(data, ["results"])
        if not isinstance(results, list):
            raise ReplyParseError("results", "expected list")
        docs = []
        for i, r in enumerate(results):
            try:
                docs.append(Document(str(r["doc_id"]), str(r.get("title", "")), str(r.get("text", "")), float(r.get("score", 0.0))))
            except (KeyError, TypeError, ValueError) as exc:
                raise ReplyParseError(f"results[{i}]", str(exc)) from None
        return RetrievalReply.ranked(docs, req.top_k)

    def close(self) -> None:
        self._client.close()
