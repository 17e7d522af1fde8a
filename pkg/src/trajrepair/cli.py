"""Command line entry point: ``trajrepair {validate,diagnose,repair,inject,eval,serve-retriever}``.

Exit codes: 0 success, 1 input error, 2 backend failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

from .backends.base import BackendError
from .diagnosis import ErrorType, diagnose
from .harness import (
    BackendFatal,
    CoverageMode,
    RunConfig,
    Strategy,
    build_handles,
    emit_report,
    load_jsonl,
    run_pipeline,
    write_jsonl,
    write_outcomes,
)
from .metrics import exact_match
from .simulate import InjectionSkip, inject_failure
from .trajectory import TrajectoryError, serialize_trajectory

EXIT_OK, EXIT_INPUT, EXIT_BACKEND = 0, 1, 2

log = logging.getLogger("trajrepair")


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def _config(args: argparse.Namespace, **overrides: object) -> RunConfig:
    overrides = {k: v for k, v in overrides.items() if v is not None}
    if getattr(args, "config", None):
        return RunConfig.load(args.config, **overrides)
    return RunConfig.from_mapping(dict(overrides))


def _out(path: str | None):
    return open(path, "w", encoding="utf-8") if path else sys.stdout


def cmd_validate(args: argparse.Namespace) -> int:
    trajectories = load_jsonl(args.input)
    print(f"ok: {len(trajectories)} trajectories")
    return EXIT_OK


def cmd_diagnose(args: argparse.Namespace) -> int:
    config = _config(args, coverage_mode=args.coverage)
    trajectories = load_jsonl(args.input)
    handles = build_handles(config, trajectories)
    fh = _out(args.out)
    try:
        for t in trajectories:
            if t.gold_answer is not None and exact_match(t.predicted_answer, t.gold_answer):
                continue
            d = diagnose(
                t,
                handles.judge,  # type: ignore[arg-type]
                use_gold_evidence=config.coverage_mode is CoverageMode.ORACLE_EVIDENCE,
                prompts=handles.prompts,
            )
            fh.write(json.dumps({"id": t.id, "diagnosis": d.to_json()}) + "\n")
    finally:
        handles.close()
        if fh is not sys.stdout:
            fh.close()
    return EXIT_OK


def _run(args: argparse.Namespace, config: RunConfig):
    trajectories = load_jsonl(args.input)
    handles = build_handles(config, trajectories)
    try:
        return run_pipeline(trajectories, config, handles)
    finally:
        handles.close()


def cmd_repair(args: argparse.Namespace) -> int:
    config = _config(args, strategy=args.strategy, concurrency=args.concurrency)
    report = _run(args, config)
    out = Path(args.out_dir or config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_jsonl(out / "repaired.jsonl", report.repaired)
    write_outcomes(out / "outcomes.jsonl", report)
    agg = report.aggregates()
    print(f"repaired {agg['corrected']}/{agg['initially_failed']} failed instances -> {out}")
    return EXIT_OK


def cmd_inject(args: argparse.Namespace) -> int:
    target = ErrorType.parse(args.type)
    fh = _out(args.out)
    skipped = 0
    try:
        for t in load_jsonl(args.input):
            try:
                injected, _ = inject_failure(t, target, args.seed)
            except InjectionSkip as exc:
                skipped += 1
                log.warning("skip: %s", exc)
                continue
            fh.write(json.dumps(serialize_trajectory(injected), ensure_ascii=False) + "\n")
    finally:
        if fh is not sys.stdout:
            fh.close()
    if skipped:
        print(f"{skipped} trajectories skipped", file=sys.stderr)
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    config = _config(args, strategy=args.strategy, concurrency=args.concurrency)
    out_dir = args.out_dir or config.output_dir
    try:
        report = _run(args, config)
    except BackendFatal as exc:
        if exc.partial is not None:
            emit_report(exc.partial, out_dir)
        raise
    paths = emit_report(report, out_dir)
    agg = report.aggregates()
    print(
        f"{report.strategy}: repair rate {100 * agg['repair_rate']:.1f}% "
        f"({agg['corrected']}/{agg['initially_failed']}), dEM {agg['delta_em']:.1f}, "
        f"mean tokens {agg['mean_tokens']:.1f} -> {paths['report'].parent}"
    )
    return EXIT_OK


def cmd_serve(args: argparse.Namespace) -> int:
    from .backends.toy import KeywordRetriever, make_search_server

    server = make_search_server(KeywordRetriever(), args.host, args.port)
    print(f"serving toy corpus on http://{args.host}:{server.server_address[1]}/search", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="trajrepair", description="Diagnose and repair failed agentic RAG trajectories.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("validate", help="check a trajectory JSONL file")
    s.add_argument("input")
    s.set_defaults(func=cmd_validate)

    s = sub.add_parser("diagnose", help="diagnose failed trajectories")
    s.add_argument("input")
    s.add_argument("--coverage", choices=[m.value for m in CoverageMode])
    s.add_argument("--config")
    s.add_argument("--out")
    s.set_defaults(func=cmd_diagnose)

    s = sub.add_parser("repair", help="repair failed trajectories with one strategy")
    s.add_argument("input")
    s.add_argument("--strategy", required=True, choices=[m.value for m in Strategy])
    s.add_argument("--config")
    s.add_argument("--concurrency", type=int)
    s.add_argument("--out-dir")
    s.set_defaults(func=cmd_repair)

    s = sub.add_parser("inject", help="inject a known failure into clean trajectories")
    s.add_argument("input")
    s.add_argument("--type", required=True, choices=["format", "reasoning", "retriever", "search"])
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out")
    s.set_defaults(func=cmd_inject)

    s = sub.add_parser("eval", help="full pipeline plus report files")
    s.add_argument("input")
    s.add_argument("--config")
    s.add_argument("--strategy", choices=[m.value for m in Strategy])
    s.add_argument("--concurrency", type=int)
    s.add_argument("--out-dir")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("serve-retriever", help="serve the bundled toy corpus over HTTP")
    s.add_argument("--host", default="127.0.0.1")
    s.add_argument("--port", type=int, default=8765)
    s.set_defaults(func=cmd_serve)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (BackendError, BackendFatal) as exc:
        print(f"backend failure: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except (TrajectoryError, ValueError, OSError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
