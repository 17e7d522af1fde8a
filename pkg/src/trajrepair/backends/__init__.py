"""Model and retriever backends: live HTTP clients, scripted replay, toy corpus."""

from .base import (
    BackendError,
    ModelHandle,
    ModelReply,
    ModelRequest,
    ReplyParseError,
    RetrievalReply,
    RetrievalRequest,
    RetrieverHandle,
    RetryableError,
    ScriptMissError,
    Tally,
    Usage,
)
from .live import HttpRetriever, OpenAICompatModel
from .scripted import PolicyModel, Script, ScriptedModel, ScriptedRetriever
from .toy import KeywordRetriever, load_toy_corpus, serve_in_thread

__all__ = [
    "BackendError",
    "HttpRetriever",
    "KeywordRetriever",
    "ModelHandle",
    "ModelReply",
    "ModelRequest",
    "OpenAICompatModel",
    "PolicyModel",
    "ReplyParseError",
    "RetrievalReply",
    "RetrievalRequest",
    "RetrieverHandle",
    "RetryableError",
    "Script",
    "ScriptMissError",
    "ScriptedModel",
    "ScriptedRetriever",
    "Tally",
    "Usage",
    "load_toy_corpus",
    "serve_in_thread",
]
