"""Diagnose and repair failed agentic RAG trajectories with prefix reuse."""

from .diagnosis import (
    Coverage,
    CoverageSource,
    CoverageValue,
    Diagnosis,
    ErrorType,
    InjectionLabel,
    admissible_labels,
    assess_coverage,
    classify_error,
    diagnose,
    localize_failure,
    oracle_diagnose,
)
from .metrics import MetricTriple, RepairStats, exact_match, normalize_answer, repair_stats, rouge_l, token_f1
from .repair import (
    AblationMode,
    RepairContext,
    RepairOperatorId,
    RepairOutcome,
    ablation_repair,
    repair,
    repair_format,
    repair_reasoning,
    repair_retriever,
    repair_search,
    rerun_baseline,
    select_operator,
    stepwise_retry_baseline,
)
from .trajectory import (
    Action,
    ActionKind,
    CostLedger,
    Document,
    Trajectory,
    aggregate_documents,
    collect_queries,
    parse_trajectory,
    prefix,
    serialize_trajectory,
)

__version__ = "0.1.0"

__all__ = [
    "AblationMode",
    "Action",
    "ActionKind",
    "CostLedger",
    "Coverage",
    "CoverageSource",
    "CoverageValue",
    "Diagnosis",
    "Document",
    "ErrorType",
    "InjectionLabel",
    "MetricTriple",
    "RepairContext",
    "RepairOperatorId",
    "RepairOutcome",
    "RepairStats",
    "Trajectory",
    "ablation_repair",
    "admissible_labels",
    "aggregate_documents",
    "assess_coverage",
    "classify_error",
    "collect_queries",
    "diagnose",
    "exact_match",
    "localize_failure",
    "normalize_answer",
    "oracle_diagnose",
    "parse_trajectory",
    "prefix",
    "repair",
    "repair_format",
    "repair_reasoning",
    "repair_retriever",
    "repair_search",
    "repair_stats",
    "rerun_baseline",
    "rouge_l",
    "select_operator",
    "serialize_trajectory",
    "stepwise_retry_baseline",
    "token_f1",
]
