"""Failure injection with known ground truth, and a simulated world of scripted
judge / repairer / agent policies for offline end-to-end evaluation."""

from __future__ import annotations

import hashlib
import random
import re
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .backends.base import ModelRequest, RetrievalReply, RetrievalRequest, normalize_salient
from .backends.scripted import PolicyModel
from .backends.toy import KeywordRetriever, load_toy_corpus
from .diagnosis import ErrorType, InjectionLabel
from .metrics import exact_match, normalize_answer
from .repair import RepairOperatorId, select_operator
from .trajectory import Action, ActionKind, Document, Trajectory, aggregate_documents


class InjectionSkip(ValueError):
    """The requested failure cannot be injected into this trajectory."""


FORMAT_WRAPPERS = (
    "Based on the evidence, the answer would be the {answer} region.",
    "After checking the documents, I believe it is {answer}, as described above.",
    "The final answer is probably {answer} according to the retrieved passages.",
)


def _rng(clean: Trajectory, target: ErrorType, seed: int) -> random.Random:
    return random.Random(f"{seed}:{clean.id}:{target.value}")


def _coverage_full(t: Trajectory) -> bool:
    if t.gold_evidence is None:
        return True
    have = {d.doc_id for d in aggregate_documents(t)}
    return all(g in have for g in t.gold_evidence)


def _distractor(t: Trajectory, rng: random.Random) -> str:
    gold = normalize_answer(t.gold_answer or "")
    pool = sorted(
        {d.title for d in aggregate_documents(t) if d.title and normalize_answer(d.title) != gold and gold not in normalize_answer(d.title)}
    )
    return rng.choice(pool) if pool else "unknown"


def _offtopic_docs(clean: Trajectory, seed: int, n: int = 2) -> tuple[Document, ...]:
    return tuple(
        Document(f"offtopic-{clean.id}-{seed}-{i}", "Unrelated passage", "This passage discusses an unrelated subject.", 0.1)
        for i in range(n)
    )


def _strip_gold(action: Action, gold: set[str]) -> Action:
    return Action.information([d for d in action.docs if d.doc_id not in gold], action.tokens)


def inject_failure(clean: Trajectory, target: ErrorType | str, seed: int) -> tuple[Trajectory, InjectionLabel]:
    """Corrupt a correct trajectory so that it fails with a known (type, index).

    Raises :class:`InjectionSkip` if the target cannot be realized.
    """
    target = ErrorType.parse(target) if isinstance(target, str) else target
    if clean.gold_answer is None or not exact_match(clean.predicted_answer, clean.gold_answer):
        raise InjectionSkip(f"{clean.id}: clean trajectory must answer its gold answer exactly")
    rng = _rng(clean, target, seed)
    body = list(clean.body)
    gold = clean.gold_answer
    gold_ids = set(clean.gold_evidence or ())

    if target is ErrorType.FORMAT:
        wrapped = FORMAT_WRAPPERS[seed % len(FORMAT_WRAPPERS)].format(answer=gold)
        label = InjectionLabel(ErrorType.FORMAT, len(body) + 1, "answer wrapped in verbose text")
        answer = wrapped

    elif target is ErrorType.REASONING:
        if not _coverage_full(clean):
            raise InjectionSkip(f"{clean.id}: reasoning errors need full coverage")
        reasons = [i for i, a in enumerate(body) if a.kind is ActionKind.REASON]
        if not reasons:
            raise InjectionSkip(f"{clean.id}: no reason actions")
        i = rng.choice(reasons)
        answer = _distractor(clean, rng)
        body[i] = Action.reason(f"Comparing the evidence, {gold} does not fit, so the answer must be {answer}.")
        label = InjectionLabel(ErrorType.REASONING, i + 1, "contradictory conclusion in a reasoning step")

    elif target in (ErrorType.RETRIEVER, ErrorType.SEARCH):
        searches = [
            i
            for i, a in enumerate(body[:-1])
            if a.kind is ActionKind.SEARCH
            and body[i + 1].kind is ActionKind.INFORMATION
            and (not gold_ids or any(d.doc_id in gold_ids for d in body[i + 1].docs))
        ]
        if target is ErrorType.SEARCH:
            searches = [i for i in searches if any(a.kind is ActionKind.REASON for a in body[:i])]
        if not searches:
            raise InjectionSkip(f"{clean.id}: no search action suitable for {target.value}")
        j = rng.choice(searches)
        if target is ErrorType.RETRIEVER:
            body[j + 1] = Action.information(_offtopic_docs(clean, seed))
            k = j + 1
            desc = "retrieval for a well-formed query returned off-topic documents"
        else:
            words = body[j].text.split()
            body[j] = Action.search(words[0] if words else "information")
            body[j + 1] = _strip_gold(body[j + 1], gold_ids) if gold_ids else Action.information(_offtopic_docs(clean, seed))
            k = max(i for i in range(j) if body[i].kind is ActionKind.REASON) + 1
            desc = "under-specified query produced by the preceding reasoning step"
        for n in range(j + 2, len(body)):
            if body[n].kind is ActionKind.INFORMATION and gold_ids:
                body[n] = _strip_gold(body[n], gold_ids)
        answer = "unknown"
        label = InjectionLabel(target, k, desc)
    else:  # pragma: no cover
        raise InjectionSkip(f"unsupported target {target}")

    meta = {**clean.meta, "injection": label.to_json(), "injection_seed": seed}
    injected = Trajectory(
        id=clean.id,
        question=clean.question,
        actions=(*body, Action.answer(answer)),
        predicted_answer=answer,
        gold_answer=clean.gold_answer,
        gold_evidence=clean.gold_evidence,
        meta=meta,
    )
    if exact_match(injected.predicted_answer, gold):
        raise InjectionSkip(f"{clean.id}: corruption did not change the answer")
    if target in (ErrorType.RETRIEVER, ErrorType.SEARCH) and gold_ids and _coverage_full(injected):
        raise InjectionSkip(f"{clean.id}: gold evidence still retrieved elsewhere; coverage stays full")
    return injected, label


# -- synthetic clean trajectories ------------------------------------------------

_BORN = re.compile(r"^(?P<person>.+?) was an? (?P<job>\w+) born in (?P<year>\d+) in the city of (?P<city>\w+)\.$")
_CITY = re.compile(r"^(?P<city>\w+) is a city located in the (?P<dir>\w+) of (?P<province>.+? Province)\.")


def synthetic_clean_set(n: int, corpus: Sequence[Document] | None = None) -> list[Trajectory]:
    """Two-hop bridge questions (person -> birth city -> province) over the toy corpus,
    each answered correctly with full evidence coverage."""
    corpus = list(corpus) if corpus is not None else load_toy_corpus()
    cities = {}
    for d in corpus:
        m = _CITY.match(d.text)
        if m:
            cities[m.group("city")] = (d, m.group("province"))
    out = []
    people = [d for d in corpus if _BORN.match(d.text) and _BORN.match(d.text).group("city") in cities]
    if not people:
        raise ValueError("corpus has no usable person/city pairs")
    for i in range(n):
        person_doc = people[i % len(people)]
        m = _BORN.match(person_doc.text)
        assert m is not None
        city_doc, province = cities[m.group("city")]
        person, city = m.group("person"), m.group("city")
        noise = corpus[(7 * i + 3) % len(corpus)]
        if noise.doc_id in (person_doc.doc_id, city_doc.doc_id):
            noise = corpus[(7 * i + 4) % len(corpus)]
        actions = (
            Action.reason(f"I need to find where {person} was born, then which province that city is in."),
            Action.search(f"{person} birthplace"),
            Action.information([Document(person_doc.doc_id, person_doc.title, person_doc.text, 0.9), noise]),
            Action.reason(f"{person} was born in {city}. Next I look up {city}."),
            Action.search(f"{city} city location"),
            Action.information([Document(city_doc.doc_id, city_doc.title, city_doc.text, 0.9)]),
            Action.reason(f"{city} is in {province}, so the answer is {province}."),
            Action.answer(province),
        )
        out.append(
            Trajectory(
                id=f"syn-{i:03d}",
                question=f"Which province is the birthplace of {person} located in?",
                actions=actions,
                predicted_answer=province,
                gold_answer=province,
                gold_evidence=(person_doc.doc_id, city_doc.doc_id),
                meta={"agent": "synthetic", "round": i // len(people)},
            )
        )
    return out


def injected_fixture_set(per_type: int = 10, seed: int = 0) -> list[Trajectory]:
    """``per_type`` injected failures for each of the four error types."""
    out = []
    clean = synthetic_clean_set(per_type * 4 + 20)
    pool = iter(clean)
    for target in ErrorType:
        made = 0
        while made < per_type:
            t = next(pool)
            try:
                injected, _ = inject_failure(t, target, seed)
            except InjectionSkip:
                continue
            out.append(injected)
            made += 1
    return out


# -- simulated world -----------------------------------------------------------


def _coin(*parts: object) -> float:
    h = hashlib.sha256(":".join(str(p) for p in parts).encode()).digest()
    return int.from_bytes(h[:8], "big") / 2**64


@dataclass
class _Entry:
    t: Trajectory
    label: InjectionLabel | None
    taint: str | None


@dataclass
class SimulatedWorld:
    """Deterministic judge, repairer and agent behavior for labeled trajectories.

    The judge is right with probability ``judge_accuracy`` per decision (hash
    coins keyed on seed, trajectory id and decision). A repair answer is
    correct iff the operator matches the injected type and the retained prefix
    ends before the injected failure index. The agent answers correctly with
    probability ``agent_success`` unless its history contains the corrupted
    action.
    """

    trajectories: Iterable[Trajectory]
    judge_accuracy: float = 1.0
    agent_success: float = 0.3
    seed: int = 0
    retriever: KeywordRetriever = field(default_factory=KeywordRetriever)

    def __post_init__(self) -> None:
        self.entries: dict[str, _Entry] = {}
        for t in self.trajectories:
            label = InjectionLabel.of(t)
            taint = None
            if label is not None and label.error_type is not ErrorType.FORMAT:
                k = label.k_dagger
                if label.error_type is ErrorType.SEARCH:
                    nxt = next((a for a in t.actions[k:] if a.kind is ActionKind.SEARCH), None)
                    taint = nxt.text if nxt is not None else None
                else:
                    taint = t.actions[k - 1].text
            self.entries[normalize_salient(t.id)] = _Entry(t, label, taint)
        self.model = PolicyModel(self.policy)

    # decisions
    def _judge_right(self, *decision: object) -> bool:
        return _coin(self.seed, "judge", *decision) < self.judge_accuracy

    def _entry(self, req: ModelRequest) -> _Entry:
        key = normalize_salient(req.salient[0]) if req.salient else ""
        try:
            return self.entries[key]
        except KeyError:
            raise KeyError(f"simulated world has no trajectory {key!r}") from None

    def _repair_succeeds(self, e: _Entry, op: RepairOperatorId, k: int | None) -> bool:
        if e.label is None or select_operator(e.label.error_type) is not op:
            return False
        return k is None or k <= e.label.k_dagger

    def policy(self, req: ModelRequest, attempt: int) -> str:
        role = req.template
        e = self._entry(req)
        gold = e.t.gold_answer or ""
        lab = e.label
        if role == "sufficiency":
            truth = _coverage_full(e.t)
            said = truth if self._judge_right(e.t.id, role) else not truth
            return "YES" if said else "NO"
        if role.startswith("classification"):
            allowed = ["FormatError", "ReasoningError"] if role.endswith("full") else ["FormatError", "RetrieverError", "SearchError"]
            truth = lab.error_type.value if lab else allowed[0]
            if truth in allowed and self._judge_right(e.t.id, role):
                return truth
            wrong = [x for x in allowed if x != truth]
            return wrong[int(_coin(self.seed, e.t.id, "pick") * len(wrong))]
        if role in ("localization", "verify-step"):
            k = int(req.salient[1])
            if lab is None or lab.error_type is ErrorType.FORMAT:
                bad = False
            elif role == "verify-step" and lab.error_type is ErrorType.RETRIEVER:
                bad = False
            else:
                bad = k >= lab.k_dagger
            if not self._judge_right(e.t.id, role, k):
                bad = not bad
            if role == "verify-step":
                return "NO" if bad else "YES"
            return "YES" if bad else "NO"
        if role == "noise-screen":
            return "YES"
        wrong_answer = e.t.predicted_answer
        if role == "answer-rewrite":
            ok = self._repair_succeeds(e, RepairOperatorId.ANSWER_REWRITE, None)
            return f"ANSWER[{gold if ok else wrong_answer}]"
        if role == "rereason":
            ok = self._repair_succeeds(e, RepairOperatorId.EVIDENCE_GROUNDED_REREASON, int(req.salient[1]))
            return f"Re-reading the documents step by step.\nANSWER[{gold if ok else wrong_answer}]"
        if role == "query-rewrite":
            return f"{req.salient[1]} details"
        if role == "retrieval-answer":
            ok = self._repair_succeeds(e, RepairOperatorId.QUERY_REWRITE_TOPK, int(req.salient[1]))
            return f"ANSWER[{gold if ok else wrong_answer}]"
        if role == "plan":
            return f"1. SEARCH: {e.t.question}\n2. REASON: combine the retrieved evidence"
        if role == "plan-reason":
            return "Combining the retrieved evidence."
        if role == "plan-answer":
            ok = self._repair_succeeds(e, RepairOperatorId.PLAN_BASED_REPAIR, int(req.salient[1]))
            return f"ANSWER[{gold if ok else wrong_answer}]"
        if role == "agent":
            n = int(req.salient[1])
            if n < e.t.K:
                return f"I should look this up.\nSEARCH[{e.t.question}]"
            tainted = e.taint is not None and e.taint in req.prompt
            ok = not tainted and _coin(self.seed, "agent", e.t.id) < self.agent_success
            return f"I can answer now.\nANSWER[{gold if ok else wrong_answer}]"
        raise KeyError(f"simulated world has no behavior for template {role!r}")

    def retrieve(self, req: RetrievalRequest) -> RetrievalReply:
        return self.retriever.retrieve(req)
