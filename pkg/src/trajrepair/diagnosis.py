"""Coverage assessment, coverage-gated error classification and earliest-failure
localization.

Nothing in this module reads ``Trajectory.gold_answer``. Gold evidence ids are
used only when the caller opts into oracle coverage.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Iterable, Mapping

from .backends.base import ModelHandle, Tally
from .parsing import first_label, parse_yes_no
from .prompts import PromptBook, default_prompts, format_action, format_actions, format_documents
from .trajectory import ActionKind, Document, Trajectory, aggregate_documents

log = logging.getLogger(__name__)


class DiagnosisError(RuntimeError):
    pass


class DegenerateInputError(DiagnosisError):
    """The trajectory has no action of the kind the error type localizes to."""


class CoverageValue(str, Enum):
    FULL = "Full"
    PARTIAL = "Partial"


class CoverageSource(str, Enum):
    ORACLE_EVIDENCE = "OracleEvidence"
    JUDGE_MODEL = "JudgeModel"
    INJECTED = "Injected"


class ErrorType(str, Enum):
    FORMAT = "FormatError"
    REASONING = "ReasoningError"
    RETRIEVER = "RetrieverError"
    SEARCH = "SearchError"

    @classmethod
    def parse(cls, text: str) -> ErrorType:
        key = text.strip().lower().replace("_", "").replace("-", "").replace(" ", "")
        for member in cls:
            if key in (member.value.lower(), member.value.lower().removesuffix("error")):
                return member
        raise ValueError(f"unknown error type {text!r}")


_ADMISSIBLE: dict[CoverageValue, tuple[ErrorType, ...]] = {
    CoverageValue.FULL: (ErrorType.FORMAT, ErrorType.REASONING),
    CoverageValue.PARTIAL: (ErrorType.FORMAT, ErrorType.RETRIEVER, ErrorType.SEARCH),
}

_FALLBACK_LABEL = {CoverageValue.FULL: ErrorType.REASONING, CoverageValue.PARTIAL: ErrorType.SEARCH}

_LABEL_ALIASES = {
    ErrorType.FORMAT.value: ["format error", "format-invalid"],
    ErrorType.REASONING.value: ["reasoning error", "reasoning logic error"],
    ErrorType.RETRIEVER.value: ["retriever error", "retriever failure", "retrieval failure"],
    ErrorType.SEARCH.value: ["search error", "reasoning-induced missing retrieval"],
}

# Action kinds each error type can be localized to.
CANDIDATE_KINDS = {
    ErrorType.REASONING: ActionKind.REASON,
    ErrorType.SEARCH: ActionKind.REASON,
    ErrorType.RETRIEVER: ActionKind.SEARCH,
}


@dataclass(frozen=True)
class Coverage:
    value: CoverageValue
    source: CoverageSource
    flags: tuple[str, ...] = ()

    @property
    def full(self) -> bool:
        return self.value is CoverageValue.FULL

    def to_json(self) -> dict[str, Any]:
        return {"value": self.value.value, "source": self.source.value, "flags": list(self.flags)}

    @classmethod
    def from_json(cls, obj: Mapping[str, Any]) -> Coverage:
        return cls(CoverageValue(obj["value"]), CoverageSource(obj["source"]), tuple(obj.get("flags", ())))


def admissible_labels(coverage: Coverage | CoverageValue) -> frozenset[ErrorType]:
    value = coverage.value if isinstance(coverage, Coverage) else coverage
    return frozenset(_ADMISSIBLE[value])


@dataclass(frozen=True)
class Diagnosis:
    error_type: ErrorType
    k_dagger: int
    coverage: Coverage
    rationale: str = ""
    diagnosis_tokens: int = 0
    flags: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.error_type not in admissible_labels(self.coverage):
            raise DiagnosisError(f"{self.error_type.value} is not admissible under {self.coverage.value.value} coverage")
        if self.k_dagger < 1:
            raise DiagnosisError("k_dagger must be >= 1")

    def check(self, t: Trajectory) -> Diagnosis:
        if not 1 <= self.k_dagger <= t.K + 1:
            raise DiagnosisError(f"k_dagger={self.k_dagger} outside 1..{t.K + 1}")
        if self.error_type is ErrorType.FORMAT and self.k_dagger != t.K + 1:
            raise DiagnosisError("format errors localize to the terminal answer")
        return self

    def to_json(self) -> dict[str, Any]:
        return {
            "error_type": self.error_type.value,
            "k_dagger": self.k_dagger,
            "coverage": self.coverage.to_json(),
            "rationale": self.rationale,
            "diagnosis_tokens": self.diagnosis_tokens,
            "flags": list(self.flags),
        }

    @classmethod
    def from_json(cls, obj: Mapping[str, Any]) -> Diagnosis:
        return cls(
            ErrorType(obj["error_type"]),
            int(obj["k_dagger"]),
            Coverage.from_json(obj["coverage"]),
            obj.get("rationale", ""),
            int(obj.get("diagnosis_tokens", 0)),
            tuple(obj.get("flags", ())),
        )


@dataclass(frozen=True)
class InjectionLabel:
    """Ground truth attached to a simulator-corrupted trajectory (``meta["injection"]``)."""

    error_type: ErrorType
    k_dagger: int
    description: str = ""

    def to_json(self) -> dict[str, Any]:
        return {"error_type": self.error_type.value, "k_dagger": self.k_dagger, "description": self.description}

    @classmethod
    def from_json(cls, obj: Mapping[str, Any]) -> InjectionLabel:
        return cls(ErrorType(obj["error_type"]), int(obj["k_dagger"]), obj.get("description", ""))

    @classmethod
    def of(cls, t: Trajectory) -> InjectionLabel | None:
        raw = t.meta.get("injection")
        return cls.from_json(raw) if raw else None


@dataclass
class _Judged:
    value: Any
    flags: list[str] = field(default_factory=list)
    rationale: str = ""


def _ask_yes_no(judge: ModelHandle, tally: Tally, req: Any) -> tuple[bool | None, str]:
    """One retry on an unparseable reply; ``None`` if both attempts fail."""
    text = ""
    for _ in range(2):
        text = tally.chat(judge, req).text
        verdict = parse_yes_no(text)
        if verdict is not None:
            return verdict, text
    return None, text


# -- coverage ----------------------------------------------------------------


def _assess_coverage(
    question: str,
    docs: Iterable[Document],
    gold_evidence: Iterable[str] | None,
    judge: ModelHandle | None,
    tally: Tally,
    key: str,
    prompts: PromptBook,
) -> Coverage:
    docs = tuple(docs)
    if gold_evidence is not None:
        have = {d.doc_id for d in docs}
        full = all(g in have for g in gold_evidence)
        return Coverage(CoverageValue.FULL if full else CoverageValue.PARTIAL, CoverageSource.ORACLE_EVIDENCE)
    if judge is None:
        raise DiagnosisError("coverage needs gold evidence or a judge")
    req = prompts.request("sufficiency", [key], max_tokens=16, question=question, documents=format_documents(docs))
    verdict, text = _ask_yes_no(judge, tally, req)
    if verdict is None:
        log.warning("unparseable sufficiency reply for %s: %r; assuming partial coverage", key, text[:80])
        return Coverage(CoverageValue.PARTIAL, CoverageSource.JUDGE_MODEL, ("unparseable_sufficiency",))
    return Coverage(CoverageValue.FULL if verdict else CoverageValue.PARTIAL, CoverageSource.JUDGE_MODEL)


def assess_coverage(
    question: str,
    docs: Iterable[Document],
    gold_evidence: Iterable[str] | None = None,
    judge: ModelHandle | None = None,
    *,
    key: str = "",
    tally: Tally | None = None,
    prompts: PromptBook | None = None,
) -> Coverage:
    """Full iff every gold doc id was retrieved, or (without gold evidence) iff the judge says so."""
    return _assess_coverage(
        question, docs, gold_evidence, judge, tally if tally is not None else Tally(), key or question, prompts or default_prompts()
    )


# -- classification ----------------------------------------------------------


def _classify(
    question: str, t: Trajectory, coverage: Coverage, judge: ModelHandle, tally: Tally, prompts: PromptBook
) -> _Judged:
    allowed = _ADMISSIBLE[coverage.value]
    role = "classification-full" if coverage.full else "classification-partial"
    req = prompts.request(
        role,
        [t.id],
        max_tokens=32,
        question=question,
        trajectory=format_actions(t.actions),
        labels=", ".join(e.value for e in allowed),
    )
    text = ""
    for _ in range(2):
        text = tally.chat(judge, req).text
        label = first_label(text, [e.value for e in allowed], _LABEL_ALIASES)
        if label is not None:
            return _Judged(ErrorType(label), rationale=text.strip())
    fallback = _FALLBACK_LABEL[coverage.value]
    log.warning("no admissible label in classifier reply for %s: %r; using %s", t.id, text[:80], fallback.value)
    return _Judged(fallback, ["inadmissible_or_unparseable_label"], text.strip())


def classify_error(
    question: str,
    t: Trajectory,
    coverage: Coverage,
    judge: ModelHandle,
    *,
    tally: Tally | None = None,
    prompts: PromptBook | None = None,
) -> ErrorType:
    """Pick one label from the coverage-admissible set; inadmissible replies fall back."""
    return _classify(question, t, coverage, judge, tally if tally is not None else Tally(), prompts or default_prompts()).value


# -- localization ------------------------------------------------------------


def candidate_indices(t: Trajectory, error_type: ErrorType) -> list[int]:
    if error_type is ErrorType.FORMAT:
        return [t.K + 1]
    kind = CANDIDATE_KINDS[error_type]
    return [i for i, a in enumerate(t.body, start=1) if a.kind is kind]


def _localize(t: Trajectory, error_type: ErrorType, judge: ModelHandle, tally: Tally, prompts: PromptBook) -> _Judged:
    if error_type is ErrorType.FORMAT:
        return _Judged(t.K + 1)
    candidates = candidate_indices(t, error_type)
    if not candidates:
        raise DegenerateInputError(
            f"{t.id}: no {CANDIDATE_KINDS[error_type].value} actions to localize a {error_type.value} to"
        )
    flags: list[str] = []
    for k in candidates:
        req = prompts.request(
            "localization",
            [t.id, k],
            max_tokens=16,
            question=t.question,
            error_type=error_type.value,
            trajectory=format_actions(t.actions[: k - 1]),
            action=format_action(k, t.actions[k - 1]),
            index=k,
        )
        verdict, _ = _ask_yes_no(judge, tally, req)
        if verdict is None:
            flags.append(f"unparseable_localization@{k}")
        elif verdict:
            return _Judged(k, flags)
    flags.append("no_step_flagged_latest_candidate")
    return _Judged(candidates[-1], flags)


def localize_failure(
    t: Trajectory,
    error_type: ErrorType,
    judge: ModelHandle,
    *,
    tally: Tally | None = None,
    prompts: PromptBook | None = None,
) -> int:
    """Earliest candidate action the judge marks erroneous (judged earliest-first, early exit)."""
    return _localize(t, error_type, judge, tally if tally is not None else Tally(), prompts or default_prompts()).value


# -- composition ---------------------------------------------------------------


def diagnose(
    t: Trajectory,
    judge: ModelHandle,
    *,
    use_gold_evidence: bool = True,
    prompts: PromptBook | None = None,
    tally: Tally | None = None,
) -> Diagnosis:
    """Coverage, then gated classification, then localization.

    With ``use_gold_evidence`` and annotated evidence, coverage is decided by
    doc-id containment; otherwise the judge decides it.
    """
    prompts = prompts or default_prompts()
    tally = tally if tally is not None else Tally()
    start = tally.tokens
    evidence = t.gold_evidence if use_gold_evidence else None
    coverage = _assess_coverage(t.question, aggregate_documents(t), evidence, judge, tally, t.id, prompts)
    cls = _classify(t.question, t, coverage, judge, tally, prompts)
    loc = _localize(t, cls.value, judge, tally, prompts)
    flags = tuple(coverage.flags) + tuple(cls.flags) + tuple(loc.flags)
    return Diagnosis(
        error_type=cls.value,
        k_dagger=loc.value,
        coverage=coverage,
        rationale=cls.rationale,
        diagnosis_tokens=tally.tokens - start,
        flags=flags,
    ).check(t)


def screen_noise(t: Trajectory, judge: ModelHandle, *, prompts: PromptBook | None = None, tally: Tally | None = None) -> bool:
    """True if the judge deems the question answerable (unparseable counts as answerable)."""
    prompts = prompts or default_prompts()
    req = prompts.request("noise-screen", [t.id], max_tokens=8, question=t.question)
    verdict, _ = _ask_yes_no(judge, tally if tally is not None else Tally(), req)
    return verdict is not False


def oracle_diagnose(t: Trajectory, truth: InjectionLabel | None = None) -> Diagnosis:
    """Pass the injected (error_type, k_dagger) through unchanged, at zero token cost."""
    truth = truth or InjectionLabel.of(t)
    if truth is None:
        raise DiagnosisError(f"{t.id}: oracle diagnosis needs an injection label")
    if truth.error_type is ErrorType.REASONING:
        value = CoverageValue.FULL
    elif truth.error_type in (ErrorType.RETRIEVER, ErrorType.SEARCH):
        value = CoverageValue.PARTIAL
    elif t.gold_evidence is not None:
        have = {d.doc_id for d in aggregate_documents(t)}
        value = CoverageValue.FULL if all(g in have for g in t.gold_evidence) else CoverageValue.PARTIAL
    else:
        value = CoverageValue.FULL
    return Diagnosis(truth.error_type, truth.k_dagger, Coverage(value, CoverageSource.INJECTED), "oracle", 0).check(t)
