"""Prompt templates (one plain-text file per prompt role, ``{{name}}`` placeholders)."""

from __future__ import annotations

import re
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping

from .backends.base import ModelRequest
from .trajectory import Action, ActionKind, Document

_PLACEHOLDER = re.compile(r"\{\{\s*([a-zA-Z_][a-zA-Z0-9_]*)\s*\}\}")

ROLES = (
    "system",
    "sufficiency",
    "classification-full",
    "classification-partial",
    "localization",
    "noise-screen",
    "answer-rewrite",
    "rereason",
    "query-rewrite",
    "retrieval-answer",
    "plan",
    "plan-reason",
    "plan-answer",
    "agent",
    "verify-step",
)


class TemplateError(KeyError):
    pass


def render(template: str, variables: Mapping[str, object]) -> str:
    def sub(m: re.Match[str]) -> str:
        name = m.group(1)
        if name not in variables:
            raise TemplateError(f"template variable {name!r} not provided")
        return str(variables[name])

    return _PLACEHOLDER.sub(sub, template)


def placeholders(template: str) -> set[str]:
    return set(_PLACEHOLDER.findall(template))


class PromptBook:
    """Loads templates from ``directory``; missing files fall back to the shipped defaults."""

    def __init__(self, directory: str | Path | None = None) -> None:
        self.templates: dict[str, str] = {}
        shipped = resources.files("trajrepair.templates")
        for role in ROLES:
            path = Path(directory) / f"{role}.txt" if directory else None
            if path is not None and path.exists():
                self.templates[role] = path.read_text(encoding="utf-8")
            else:
                self.templates[role] = shipped.joinpath(f"{role}.txt").read_text(encoding="utf-8")

    def request(
        self,
        role: str,
        salient: Iterable[object],
        max_tokens: int = 512,
        model: str = "",
        **variables: object,
    ) -> ModelRequest:
        user = render(self.templates[role], variables).strip()
        return ModelRequest(
            messages=(("system", self.templates["system"].strip()), ("user", user)),
            temperature=0.0,
            max_tokens=max_tokens,
            model=model,
            template=role,
            salient=tuple(str(s) for s in salient),
        )


DEFAULT_PROMPTS: PromptBook | None = None


def default_prompts() -> PromptBook:
    global DEFAULT_PROMPTS
    if DEFAULT_PROMPTS is None:
        DEFAULT_PROMPTS = PromptBook()
    return DEFAULT_PROMPTS


def format_documents(docs: Iterable[Document]) -> str:
    lines = [f"[{d.doc_id}] {d.title}: {d.text}" for d in docs]
    return "\n".join(lines) if lines else "(no documents)"


def format_action(index: int, action: Action) -> str:
    if action.kind is ActionKind.INFORMATION:
        titles = ", ".join(f"[{d.doc_id}] {d.title}" for d in action.docs) or "(no documents)"
        return f"{index}. INFORMATION: {titles}"
    return f"{index}. {action.kind.value.upper()}: {action.payload}"


def format_actions(actions: Iterable[Action], start: int = 1) -> str:
    lines = [format_action(i, a) for i, a in enumerate(actions, start=start)]
    return "\n".join(lines) if lines else "(no previous steps)"
