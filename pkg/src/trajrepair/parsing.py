"""Lenient parsers for model replies."""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterable, Sequence

_TAG_LINE = re.compile(r"^\s*(SEARCH|ANSWER)\s*\[(.*)\]\s*$", re.IGNORECASE)
_ANSWER_ANYWHERE = re.compile(r"ANSWER\s*\[(.*?)\]", re.IGNORECASE | re.DOTALL)
_STEP_PREFIX = re.compile(r"^\s*(?:step\s*)?\d+\s*[.):]\s*", re.IGNORECASE)
_PLAN_LINE = re.compile(r"^\s*(?:step\s*)?\d+\s*[.):]?\s*(REASON|SEARCH)\s*[:\-]\s*(.+?)\s*$", re.IGNORECASE)
_YES = re.compile(r"\b(yes|sufficient|erroneous|valid)\b", re.IGNORECASE)
_NO = re.compile(r"\b(no|insufficient|not\s+erroneous|invalid)\b", re.IGNORECASE)


def parse_yes_no(text: str) -> bool | None:
    """Verdict from the first line that carries one; ``None`` if unparseable."""
    for line in text.strip().splitlines():
        line = line.strip()
        if not line:
            continue
        no = _NO.search(line)
        yes = _YES.search(line)
        if no and (not yes or no.start() <= yes.start()):
            return False
        if yes:
            return True
        return None
    return None


@dataclass(frozen=True)
class AgentTurn:
    thought: str
    tag: str  # "SEARCH" or "ANSWER"
    value: str


def parse_agent_turn(text: str) -> AgentTurn | None:
    """Free-text lines become the thought; the first tag line ends the turn."""
    thought: list[str] = []
    for line in text.splitlines():
        m = _TAG_LINE.match(line)
        if m:
            value = m.group(2).strip()
            if m.group(1).upper() == "SEARCH" and not value:
                return None
            return AgentTurn(" ".join(thought), m.group(1).upper(), value)
        if line.strip():
            thought.append(line.strip())
    return None


def extract_answer(text: str) -> str | None:
    m = _ANSWER_ANYWHERE.search(text)
    if m:
        return m.group(1).strip()
    return None


def parse_reasoning(text: str) -> tuple[list[str], str | None]:
    """Reasoning lines (one step each) and the tagged answer, if present."""
    steps: list[str] = []
    answer = None
    for line in text.splitlines():
        m = _TAG_LINE.match(line)
        if m and m.group(1).upper() == "ANSWER":
            answer = m.group(2).strip()
            break
        line = line.strip()
        if not line:
            continue
        line = _STEP_PREFIX.sub("", line)
        if line.upper().startswith("REASON:"):
            line = line[len("REASON:"):].strip()
        if line:
            steps.append(line)
    if answer is None:
        answer = extract_answer(text)
    return steps, answer


def parse_plan(text: str) -> tuple[list[tuple[str, str]], int]:
    """Plan steps as ``(kind, content)`` plus the count of skipped lines."""
    steps: list[tuple[str, str]] = []
    skipped = 0
    for line in text.splitlines():
        if not line.strip():
            continue
        m = _PLAN_LINE.match(line)
        if m:
            steps.append((m.group(1).upper(), m.group(2)))
        else:
            skipped += 1
    return steps, skipped


def first_label(text: str, labels: Sequence[str], aliases: dict[str, Iterable[str]] | None = None) -> str | None:
    """Earliest-mentioned label among ``labels`` (case-insensitive)."""
    best: tuple[int, str] | None = None
    for label in labels:
        patterns = [label, *((aliases or {}).get(label, ()))]
        for p in patterns:
            m = re.search(r"\b" + re.escape(p).replace(r"\ ", r"\s*") + r"\b", text, re.IGNORECASE)
            if m and (best is None or m.start() < best[0]):
                best = (m.start(), label)
    return best[1] if best else None


def clean_line(text: str) -> str:
    for line in text.splitlines():
        line = line.strip()
        if line:
            m = _TAG_LINE.match(line)
            if m:
                return m.group(2).strip()
            return line.strip().strip('"').strip()
    return ""
