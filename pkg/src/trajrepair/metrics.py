"""Answer-quality (EM, token F1, ROUGE-L) and repair-quality metrics."""

from __future__ import annotations

import re
import string
from collections import Counter
from dataclasses import asdict, dataclass
from typing import Sequence

_ARTICLES = re.compile(r"\b(a|an|the)\b")
_PUNCT = str.maketrans("", "", string.punctuation)


def normalize_answer(text: str) -> str:
    """Lowercase, drop punctuation and articles, collapse whitespace."""
    text = text.lower().translate(_PUNCT)
    text = _ARTICLES.sub(" ", text)
    return " ".join(text.split())


def exact_match(pred: str, gold: str) -> int:
    return int(normalize_answer(pred) == normalize_answer(gold))


def token_f1(pred: str, gold: str) -> float:
    p = normalize_answer(pred).split()
    g = normalize_answer(gold).split()
    if not p and not g:
        return 1.0
    if not p or not g:
        return 0.0
    overlap = sum((Counter(p) & Counter(g)).values())
    if overlap == 0:
        return 0.0
    precision = overlap / len(p)
    recall = overlap / len(g)
    return 2 * precision * recall / (precision + recall)


def lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    if len(a) < len(b):
        a, b = b, a
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, start=1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def rouge_tokens(text: str) -> list[str]:
    """Lowercased, punctuation-free tokens; articles are kept, as in common ROUGE tokenizers."""
    return text.lower().translate(_PUNCT).split()


def rouge_l(pred: str, gold: str) -> float:
    """LCS F-measure (beta = 1) over :func:`rouge_tokens`.

    Answers that are equal after :func:`normalize_answer` score 1.0, so an
    exact match always implies a perfect ROUGE-L.
    """
    if normalize_answer(pred) == normalize_answer(gold):
        return 1.0
    p = rouge_tokens(pred)
    g = rouge_tokens(gold)
    if not p and not g:
        return 1.0
    if not p or not g:
        return 0.0
    lcs = lcs_length(p, g)
    if lcs == 0:
        return 0.0
    precision = lcs / len(p)
    recall = lcs / len(g)
    return 2 * precision * recall / (precision + recall)


@dataclass(frozen=True)
class MetricTriple:
    em: int
    f1: float
    rouge_l: float

    @classmethod
    def score(cls, pred: str, gold: str) -> MetricTriple:
        return cls(exact_match(pred, gold), token_f1(pred, gold), rouge_l(pred, gold))

    def to_json(self) -> dict[str, float]:
        return asdict(self)


class RepairContractError(ValueError):
    """Repair touched an instance that was already correct."""


@dataclass(frozen=True)
class RepairStats:
    total: int
    initially_failed: int
    corrected: int
    repair_rate: float
    delta_em: float
    delta_f1: float
    delta_rouge_l: float

    def to_json(self) -> dict[str, float]:
        return asdict(self)


def _mean(xs: Sequence[float]) -> float:
    return sum(xs) / len(xs) if xs else 0.0


def repair_stats(before: Sequence[MetricTriple], after: Sequence[MetricTriple]) -> RepairStats:
    """Aggregate repair effect. Deltas are in percentage points."""
    if len(before) != len(after):
        raise ValueError(f"length mismatch: {len(before)} before vs {len(after)} after")
    failed = corrected = 0
    for i, (b, a) in enumerate(zip(before, after, strict=True)):
        if b.em == 1:
            if a != b:
                raise RepairContractError(f"instance {i} was correct before repair but changed")
            continue
        failed += 1
        corrected += a.em
    total = len(before)
    return RepairStats(
        total=total,
        initially_failed=failed,
        corrected=corrected,
        repair_rate=corrected / failed if failed else 0.0,
        delta_em=100.0 * corrected / total if total else 0.0,
        delta_f1=100.0 * (_mean([m.f1 for m in after]) - _mean([m.f1 for m in before])),
        delta_rouge_l=100.0 * (_mean([m.rouge_l for m in after]) - _mean([m.rouge_l for m in before])),
    )
