"""Independent reference implementations used to check the production code."""

from __future__ import annotations

import itertools
import random
import re
import string

_VOCAB = ["the", "a", "an", "city", "south", "north", "Liaoning", "of", "river", "Dalian", "x", "y", "1999", "Kaiyuan,"]


def ref_normalize(text: str) -> list[str]:
    text = "".join(ch for ch in text.lower() if ch not in set(string.punctuation))
    return [w for w in text.split() if w not in {"a", "an", "the"}]


def ref_em(pred: str, gold: str) -> int:
    return int(ref_normalize(pred) == ref_normalize(gold))


def ref_overlap(p: list[str], g: list[str]) -> int:
    """Multiset intersection size by repeated removal."""
    pool = list(g)
    hits = 0
    for w in p:
        if w in pool:
            pool.remove(w)
            hits += 1
    return hits


def _fmeasure(hit: int, np_: int, ng: int) -> float:
    if np_ == 0 and ng == 0:
        return 1.0
    if np_ == 0 or ng == 0 or hit == 0:
        return 0.0
    p, r = hit / np_, hit / ng
    return 2 * p * r / (p + r)


def ref_f1(pred: str, gold: str) -> float:
    p, g = ref_normalize(pred), ref_normalize(gold)
    return _fmeasure(ref_overlap(p, g), len(p), len(g))


def ref_lcs(a: list[str], b: list[str]) -> int:
    """Longest common subsequence by exhaustive enumeration of a's subsequences."""
    best = 0
    for r in range(len(a), 0, -1):
        for combo in itertools.combinations(a, r):
            it = iter(b)
            if all(any(x == y for y in it) for x in combo):
                return r
    return best


def ref_rouge_l(pred: str, gold: str) -> float:
    if ref_normalize(pred) == ref_normalize(gold):
        return 1.0
    strip = lambda s: "".join(ch for ch in s.lower() if ch not in set(string.punctuation)).split()  # noqa: E731
    p, g = strip(pred), strip(gold)
    return _fmeasure(ref_lcs(p, g), len(p), len(g))


def random_answer(rng: random.Random, max_words: int = 7) -> str:
    words = [rng.choice(_VOCAB) for _ in range(rng.randint(0, max_words))]
    text = " ".join(words)
    if rng.random() < 0.3:
        text = re.sub(r"\s", "  ", text) + rng.choice(["", ".", "!", " ?"])
    if rng.random() < 0.3:
        text = text.upper()
    return text
