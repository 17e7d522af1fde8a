"""Batch evaluation: strategy execution over failed trajectories, aggregation
and report files."""

from __future__ import annotations

import configparser
import csv
import json
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Sequence

from .backends.base import BackendError, ModelHandle, RetrieverHandle
from .backends.live import HttpRetriever, OpenAICompatModel
from .backends.scripted import Script, ScriptedModel, ScriptedRetriever
from .diagnosis import (
    Diagnosis,
    InjectionLabel,
    diagnose,
    oracle_diagnose,
    screen_noise,
)
from .metrics import MetricTriple, RepairStats, repair_stats
from .prompts import PromptBook
from .simulate import SimulatedWorld
from .repair import (
    AblationMode,
    RepairContext,
    RepairOutcome,
    ablation_repair,
    repair,
    rerun_baseline,
    stepwise_retry_baseline,
)
from .trajectory import CostLedger, Trajectory, TrajectoryError, parse_trajectory, serialize_trajectory

log = logging.getLogger(__name__)


class Strategy(str, Enum):
    DRRAG = "drrag"
    RERUN = "rerun"
    STEPWISE = "stepwise"
    NO_TAXONOMY = "drrag-no-taxonomy"
    NO_LOCALIZATION = "drrag-no-localization"
    ORACLE = "oracle"

    @classmethod
    def parse(cls, text: str) -> Strategy:
        key = text.strip().lower().replace("_", "-")
        aliases = {
            "drragnotaxonomy": cls.NO_TAXONOMY,
            "notaxonomy": cls.NO_TAXONOMY,
            "drragnolocalization": cls.NO_LOCALIZATION,
            "nolocalization": cls.NO_LOCALIZATION,
        }
        for member in cls:
            if key == member.value:
                return member
        try:
            return aliases[key.replace("-", "")]
        except KeyError:
            raise ValueError(f"unknown strategy {text!r}; choose from {[m.value for m in cls]}") from None


class CoverageMode(str, Enum):
    ORACLE_EVIDENCE = "oracle"
    JUDGE = "judge"


class BackendFatal(RuntimeError):
    """Backend failures exceeded the run's budget; the batch was aborted."""

    def __init__(self, message: str, partial: EvalReport | None = None) -> None:
        super().__init__(message)
        self.partial = partial


@dataclass
class RunConfig:
    strategy: Strategy = Strategy.DRRAG
    base_top_k: int = 5
    top_k_multiplier: int = 2
    max_steps: int = 10
    coverage_mode: CoverageMode = CoverageMode.JUDGE
    concurrency: int = 1
    max_repair_rounds: int = 1
    noise_filter: bool = False
    max_backend_failures: int = 10
    output_dir: str = "report"
    template_dir: str | None = None
    # backends
    backend: str = "live"  # live | script | simulated
    script_path: str | None = None
    llm_base_url: str | None = None
    llm_model: str | None = None
    llm_api_key: str | None = None
    retriever_base_url: str | None = None
    judge_accuracy: float = 1.0
    agent_success: float = 0.3
    seed: int = 0

    def __post_init__(self) -> None:
        self.strategy = Strategy.parse(self.strategy) if isinstance(self.strategy, str) else self.strategy
        self.coverage_mode = CoverageMode(self.coverage_mode)
        for name in ("base_top_k", "top_k_multiplier", "max_steps", "concurrency", "max_repair_rounds"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")

    @classmethod
    def load(cls, path: str | Path, **overrides: Any) -> RunConfig:
        """Read an INI-style ``key = value`` file; section names are ignored.

        Precedence: explicit overrides > config file > environment > defaults.
        """
        parser = configparser.ConfigParser()
        text = Path(path).read_text()
        if not text.lstrip().startswith("["):
            text = "[run]\n" + text
        parser.read_string(text)
        values: dict[str, Any] = {}
        for section in parser.sections():
            values.update(parser[section])
        return cls.from_mapping({**values, **{k: v for k, v in overrides.items() if v is not None}})

    @classmethod
    def from_mapping(cls, values: dict[str, Any]) -> RunConfig:
        env = {
            "llm_base_url": os.environ.get("LLM_BASE_URL"),
            "llm_model": os.environ.get("LLM_MODEL"),
            "llm_api_key": os.environ.get("LLM_API_KEY"),
            "retriever_base_url": os.environ.get("RETRIEVER_BASE_URL"),
        }
        merged: dict[str, Any] = {k: v for k, v in env.items() if v}
        known = {f for f in cls.__dataclass_fields__}
        for k, v in values.items():
            k = k.replace("-", "_")
            if k not in known:
                raise ValueError(f"unknown config key {k!r}")
            merged[k] = v
        for name, f in cls.__dataclass_fields__.items():
            if name not in merged or not isinstance(merged[name], str):
                continue
            default = f.default
            if isinstance(default, bool):
                merged[name] = merged[name].strip().lower() in ("1", "true", "yes", "on")
            elif isinstance(default, int):
                merged[name] = int(merged[name])
            elif isinstance(default, float):
                merged[name] = float(merged[name])
        return cls(**merged)


@dataclass
class Handles:
    llm: ModelHandle
    retriever: RetrieverHandle
    judge: ModelHandle | None = None
    prompts: PromptBook | None = None

    def __post_init__(self) -> None:
        if self.judge is None:
            self.judge = self.llm

    def close(self) -> None:
        """Release network clients held by live backends."""
        seen: set[int] = set()
        for h in (self.llm, self.judge, self.retriever):
            if id(h) not in seen and hasattr(h, "close"):
                seen.add(id(h))
                h.close()


@dataclass
class InstanceRecord:
    index: int
    id: str
    before: MetricTriple
    after: MetricTriple
    failed: bool
    skipped: str | None = None
    diagnosis: Diagnosis | None = None
    outcome: RepairOutcome | None = None
    label: InjectionLabel | None = None
    error: str | None = None
    backend_failure: bool = False
    rounds: int = 0

    @property
    def corrected(self) -> bool:
        return self.failed and self.after.em == 1

    @property
    def ledger(self) -> CostLedger:
        return self.outcome.ledger if self.outcome is not None else CostLedger()

    def stratum(self) -> str:
        """Per-type row key: diagnosed type and coverage, else the injected type."""
        if self.diagnosis is not None:
            return f"{self.diagnosis.error_type.value}|{self.diagnosis.coverage.value.value}"
        if self.label is not None:
            return f"{self.label.error_type.value}|-"
        return "Undiagnosed|-"

    def to_json(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "failed": self.failed,
            "corrected": self.corrected,
            "skipped": self.skipped,
            "before": self.before.to_json(),
            "after": self.after.to_json(),
            "diagnosis": self.diagnosis.to_json() if self.diagnosis else None,
            "label": self.label.to_json() if self.label else None,
            "outcome": self.outcome.summary() if self.outcome else None,
            "error": self.error,
            "rounds": self.rounds,
        }


@dataclass
class EvalReport:
    strategy: str
    records: list[InstanceRecord] = field(default_factory=list)
    repaired: list[Trajectory] = field(default_factory=list)
    aborted: str | None = None

    @property
    def stats(self) -> RepairStats:
        return repair_stats([r.before for r in self.records], [r.after for r in self.records])

    def failed_records(self) -> list[InstanceRecord]:
        return [r for r in self.records if r.failed]

    def aggregates(self) -> dict[str, Any]:
        failed = self.failed_records()
        stats = self.stats
        n = len(failed)
        return {
            **stats.to_json(),
            "repair_rate_pct": 100.0 * stats.repair_rate,
            "errored": sum(1 for r in failed if r.error),
            "skipped": sum(1 for r in failed if r.skipped),
            "mean_tokens": sum(r.ledger.total_tokens() for r in failed) / n if n else 0.0,
            "mean_diagnosis_tokens": sum(r.ledger.diagnosis_tokens for r in failed) / n if n else 0.0,
            "mean_repair_tokens": sum(r.ledger.repair_tokens for r in failed) / n if n else 0.0,
            "mean_retrieval_calls": sum(r.ledger.retrieval_calls for r in failed) / n if n else 0.0,
            "mean_wall_time_ms": sum(r.ledger.wall_time_ms for r in failed) / n if n else 0.0,
        }

    def per_type(self) -> list[dict[str, Any]]:
        rows: dict[str, dict[str, Any]] = {}
        for r in self.failed_records():
            error_type, coverage = r.stratum().split("|")
            row = rows.setdefault(r.stratum(), {"error_type": error_type, "coverage": coverage, "count": 0, "corrected": 0})
            row["count"] += 1
            row["corrected"] += int(r.corrected)
        out = []
        for key in sorted(rows):
            row = rows[key]
            row["repair_rate_pct"] = 100.0 * row["corrected"] / row["count"]
            out.append(row)
        return out

    def confusion(self) -> tuple[list[str], list[str], list[list[int]]]:
        """Rows: injected type (or ``Unlabeled``); columns: diagnosed type|coverage."""
        diagnosed = [r for r in self.failed_records() if r.diagnosis is not None]
        rows = sorted({r.label.error_type.value if r.label else "Unlabeled" for r in diagnosed})
        cols = sorted({f"{r.diagnosis.error_type.value}|{r.diagnosis.coverage.value.value}" for r in diagnosed})  # type: ignore[union-attr]
        cells = [[0] * len(cols) for _ in rows]
        for r in diagnosed:
            i = rows.index(r.label.error_type.value if r.label else "Unlabeled")
            j = cols.index(f"{r.diagnosis.error_type.value}|{r.diagnosis.coverage.value.value}")  # type: ignore[union-attr]
            cells[i][j] += 1
        return rows, cols, cells

    def to_json(self) -> dict[str, Any]:
        rows, cols, cells = self.confusion()
        labeled = [r for r in self.failed_records() if r.diagnosis is not None]
        true_counts: dict[str, int] = {}
        for r in labeled:
            key = r.label.error_type.value if r.label else "Unlabeled"
            true_counts[key] = true_counts.get(key, 0) + 1
        return {
            "strategy": self.strategy,
            "aborted": self.aborted,
            "aggregates": self.aggregates(),
            "per_type": self.per_type(),
            "confusion": {"rows": rows, "columns": cols, "cells": cells, "row_counts": true_counts},
            "diagnosis_accuracy": self.diagnosis_accuracy(),
            "records": [r.to_json() for r in self.records],
        }

    def diagnosis_accuracy(self) -> float | None:
        scored = [r for r in self.failed_records() if r.diagnosis is not None and r.label is not None]
        if not scored:
            return None
        hits = sum(
            1 for r in scored if (r.diagnosis.error_type, r.diagnosis.k_dagger) == (r.label.error_type, r.label.k_dagger)  # type: ignore[union-attr]
        )
        return hits / len(scored)


# -- pipeline ----------------------------------------------------------------


def load_jsonl(path: str | Path) -> list[Trajectory]:
    """Parse every line; errors name the 1-based line number."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                out.append(parse_trajectory(json.loads(line)))
            except (json.JSONDecodeError, TrajectoryError) as exc:
                raise TrajectoryError(f"line {lineno}: {exc}") from exc
    return out


def write_jsonl(path: str | Path, trajectories: Iterable[Trajectory]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for t in trajectories:
            fh.write(json.dumps(serialize_trajectory(t), ensure_ascii=False) + "\n")


def _repair_once(t: Trajectory, config: RunConfig, handles: Handles, ctx: RepairContext) -> tuple[Diagnosis | None, RepairOutcome]:
    s = config.strategy
    if s is Strategy.RERUN:
        return None, rerun_baseline(t, ctx.agent)
    if s is Strategy.STEPWISE:
        return None, stepwise_retry_baseline(t, handles.judge, ctx.agent, prompts=handles.prompts)  # type: ignore[arg-type]
    if s is Strategy.ORACLE:
        diagnosis = oracle_diagnose(t)
    else:
        diagnosis = diagnose(
            t,
            handles.judge,  # type: ignore[arg-type]
            use_gold_evidence=config.coverage_mode is CoverageMode.ORACLE_EVIDENCE,
            prompts=handles.prompts,
        )
    if s is Strategy.NO_TAXONOMY:
        return diagnosis, ablation_repair(t, diagnosis, AblationMode.NO_TAXONOMY, ctx)
    if s is Strategy.NO_LOCALIZATION:
        return diagnosis, ablation_repair(t, diagnosis, AblationMode.NO_LOCALIZATION, ctx)
    return diagnosis, repair(t, diagnosis, ctx)


def _process(index: int, t: Trajectory, config: RunConfig, handles: Handles) -> InstanceRecord:
    gold = t.gold_answer or ""
    before = MetricTriple.score(t.predicted_answer, gold)
    label = InjectionLabel.of(t)
    if t.gold_answer is None or before.em == 1:
        return InstanceRecord(index, t.id, before, before, failed=False, label=label)
    record = InstanceRecord(index, t.id, before, before, failed=True, label=label)
    if config.noise_filter and not screen_noise(t, handles.judge, prompts=handles.prompts):  # type: ignore[arg-type]
        record.skipped = "dataset_noise"
        return record
    ctx = RepairContext(
        handles.llm, handles.retriever, config.base_top_k, config.top_k_multiplier, config.max_steps, handles.prompts
    )
    current = t
    ledger = CostLedger()
    start = time.perf_counter()
    try:
        for round_no in range(1, config.max_repair_rounds + 1):
            diagnosis, outcome = _repair_once(current, config, handles, ctx)
            ledger = ledger + outcome.ledger
            record.rounds = round_no
            if record.diagnosis is None:
                record.diagnosis = diagnosis
            current = outcome.repaired
            record.outcome = outcome
            if MetricTriple.score(current.predicted_answer, gold).em == 1:
                break
    except BackendError as exc:
        log.warning("instance %s: backend failure: %s", t.id, exc)
        record.error = f"{type(exc).__name__}: {exc}"
        record.backend_failure = True
        record.outcome = None
        return record
    except Exception as exc:  # noqa: BLE001 - per-instance isolation
        log.warning("instance %s failed: %s", t.id, exc)
        record.error = f"{type(exc).__name__}: {exc}"
        record.outcome = None
        return record
    wall = int((time.perf_counter() - start) * 1000)
    assert record.outcome is not None
    record.outcome = replace(record.outcome, ledger=replace(ledger, wall_time_ms=wall))
    record.after = MetricTriple.score(current.predicted_answer, gold)
    return record


def run_pipeline(dataset: str | Path | Sequence[Trajectory], config: RunConfig, handles: Handles) -> EvalReport:
    """Repair every EM=0 instance with the configured strategy; others pass through.

    Per-instance failures are recorded and counted as not corrected. Backend
    failures are recorded too, until more than ``max_backend_failures`` occur;
    then the batch aborts with :class:`BackendFatal` carrying the partial report.
    """
    trajectories = load_jsonl(dataset) if isinstance(dataset, (str, Path)) else list(dataset)
    if config.strategy is Strategy.ORACLE:
        missing = [
            t.id
            for t in trajectories
            if t.gold_answer is not None
            and not MetricTriple.score(t.predicted_answer, t.gold_answer).em
            and InjectionLabel.of(t) is None
        ]
        if missing:
            raise ValueError(f"oracle strategy needs injection labels; missing on {missing[:5]}")
    records: list[InstanceRecord | None] = [None] * len(trajectories)
    backend_failures = 0
    aborted = None
    with ThreadPoolExecutor(max_workers=config.concurrency) as pool:
        futures = [pool.submit(_process, i, t, config, handles) for i, t in enumerate(trajectories)]
        for fut in as_completed(futures):
            if fut.cancelled():
                continue
            rec = fut.result()
            records[rec.index] = rec
            backend_failures += rec.backend_failure
            if backend_failures > config.max_backend_failures and aborted is None:
                aborted = f"{backend_failures} backend failures (budget {config.max_backend_failures})"
                for other in futures:
                    other.cancel()

    report = EvalReport(config.strategy.value, [r for r in records if r is not None], aborted=aborted)
    report.repaired = [
        r.outcome.repaired if r.outcome is not None else trajectories[r.index] for r in report.records
    ]
    if aborted:
        raise BackendFatal(aborted, report)
    return report


# -- report files --------------------------------------------------------------

SUMMARY_HEADER = "| Strategy | Tokens | Repair Rate | ΔEM | ΔF1 | ΔR-L |"


def summary_row(agg: dict[str, Any], strategy: str) -> str:
    return (
        f"| {strategy} | {agg['mean_tokens']:.1f} | {agg['repair_rate_pct']:.1f} | "
        f"{agg['delta_em']:.1f} | {agg['delta_f1']:.1f} | {agg['delta_rouge_l']:.1f} |"
    )


def write_outcomes(path: str | Path, report: EvalReport) -> None:
    """Sidecar JSONL: one line per initially failed instance."""
    with open(path, "w", encoding="utf-8") as fh:
        for r in report.failed_records():
            row = {
                "id": r.id,
                "operator": r.outcome.operator if r.outcome else None,
                "prefix_len": r.outcome.prefix_len if r.outcome else None,
                "diagnosis": r.diagnosis.to_json() if r.diagnosis else None,
                "ledger": r.ledger.to_json(),
                "corrected": r.corrected,
                "error": r.error,
            }
            fh.write(json.dumps(row) + "\n")


def emit_report(report: EvalReport, out_dir: str | Path) -> dict[str, Path]:
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        paths = {
            "report": out / "report.json",
            "summary": out / "summary.md",
            "per_type": out / "per_type.csv",
            "confusion": out / "confusion.csv",
            "repaired": out / "repaired.jsonl",
            "outcomes": out / "outcomes.jsonl",
        }
        data = report.to_json()
        paths["report"].write_text(json.dumps(data, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")

        agg = data["aggregates"]
        lines = [
            f"# Repair summary ({report.strategy})",
            "",
            f"Instances: {agg['total']}, initially failed: {agg['initially_failed']}, corrected: {agg['corrected']}, "
            f"errored: {agg['errored']}",
            "",
            SUMMARY_HEADER,
            "|---|---|---|---|---|---|",
        ]
        if agg["total"]:
            lines.append(summary_row(agg, report.strategy))
        paths["summary"].write_text("\n".join(lines) + "\n", encoding="utf-8")

        with open(paths["per_type"], "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["error_type", "coverage", "count", "corrected", "repair_rate_pct"])
            for row in data["per_type"]:
                w.writerow([row["error_type"], row["coverage"], row["count"], row["corrected"], f"{row['repair_rate_pct']:.1f}"])

        conf = data["confusion"]
        with open(paths["confusion"], "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["true_type", *conf["columns"], "total"])
            for name, cells in zip(conf["rows"], conf["cells"], strict=True):
                w.writerow([name, *cells, sum(cells)])

        write_jsonl(paths["repaired"], report.repaired)
        write_outcomes(paths["outcomes"], report)
    except OSError as exc:
        raise OSError(f"writing report to {out}: {exc}") from exc
    return paths


def build_handles(config: RunConfig, trajectories: Sequence[Trajectory] = ()) -> Handles:
    """Construct backends for ``config.backend`` (``live``, ``script`` or ``simulated``)."""
    prompts = PromptBook(config.template_dir) if config.template_dir else None
    if config.backend == "live":
        llm = OpenAICompatModel(config.llm_base_url, config.llm_model, config.llm_api_key)
        return Handles(llm, HttpRetriever(config.retriever_base_url), prompts=prompts)
    if config.backend == "script":
        if not config.script_path:
            raise ValueError("backend = script needs script_path")
        script = Script.load(config.script_path)
        return Handles(ScriptedModel(script), ScriptedRetriever.from_script(script, strict=False), prompts=prompts)
    if config.backend == "simulated":
        world = SimulatedWorld(trajectories, config.judge_accuracy, config.agent_success, config.seed)
        return Handles(world.model, world, prompts=prompts)
    raise ValueError(f"unknown backend {config.backend!r}")
