"""Keyword-overlap reference retriever over the bundled toy corpus, and a tiny
HTTP server exposing any retriever through the ``/search`` protocol."""

from __future__ import annotations

import json
import logging
import re
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from importlib import resources
from typing import Iterable

from ..trajectory import Document
from .base import RetrievalReply, RetrievalRequest, RetrieverHandle

log = logging.getLogger(__name__)

_WORD = re.compile(r"[a-z0-9]+")
_STOP = frozenset("a an the of in on is was and or to for by with which who what where when this these that".split())


def _terms(text: str) -> set[str]:
    return {w for w in _WORD.findall(text.lower()) if w not in _STOP}


def load_toy_corpus() -> list[Document]:
    raw = resources.files("trajrepair.data").joinpath("toy_corpus.jsonl").read_text(encoding="utf-8")
    return [Document(**json.loads(line)) for line in raw.splitlines() if line.strip()]


class KeywordRetriever:
    """Scores documents by the fraction of query terms found in title + text."""

    def __init__(self, corpus: Iterable[Document] | None = None) -> None:
        self.corpus = list(corpus) if corpus is not None else load_toy_corpus()
        self._index = [(_terms(d.title + " " + d.text), d) for d in self.corpus]

    def retrieve(self, req: RetrievalRequest) -> RetrievalReply:
        q = _terms(req.query)
        if not q or req.top_k == 0:
            return RetrievalReply(())
        scored = []
        for terms, doc in self._index:
            hits = len(q & terms)
            if hits:
                scored.append(Document(doc.doc_id, doc.title, doc.text, round(hits / len(q), 6)))
        return RetrievalReply.ranked(scored, req.top_k)


def make_search_server(retriever: RetrieverHandle, host: str = "127.0.0.1", port: int = 0) -> ThreadingHTTPServer:
    class Handler(BaseHTTPRequestHandler):
        def do_POST(self) -> None:  # noqa: N802
            if self.path.rstrip("/") != "/search":
                self.send_error(404)
                return
            try:
                body = json.loads(self.rfile.read(int(self.headers.get("Content-Length", 0))))
                req = RetrievalRequest(str(body["query"]), int(body.get("top_k", 5)))
            except (ValueError, KeyError, TypeError) as exc:
                self.send_error(400, str(exc))
                return
            reply = retriever.retrieve(req)
            payload = json.dumps({"results": [d.to_json() for d in reply.docs]}).encode()
            self.send_response(200)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(payload)))
            self.end_headers()
            self.wfile.write(payload)

        def log_message(self, fmt: str, *args: object) -> None:
            log.debug(fmt, *args)

    return ThreadingHTTPServer((host, port), Handler)


def serve_in_thread(retriever: RetrieverHandle, host: str = "127.0.0.1", port: int = 0) -> tuple[ThreadingHTTPServer, str]:
    server = make_search_server(retriever, host, port)
    threading.Thread(target=server.serve_forever, daemon=True).start()
    h, p = server.server_address[:2]
    return server, f"http://{h}:{p}"
