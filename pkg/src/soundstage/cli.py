"""Command line entry points: run, plan, bench, inspect-tree.

Exit codes partition failure classes:
  0 success          5 stage-2 failure
  2 config error     6 stage-3 failure
  3 input error      7 mixdown/output failure
  4 stage-1 failure  8 trace parse error
  9 manifest error   1 anything unexpected
"""
from __future__ import annotations

import argparse
import json
import os
import sys

from .errors import (
    ConfigError,
    InputError,
    ManifestError,
    PipelineStageError,
    TraceParseError,
)
from .pipeline import RunConfig, bench, input_from_file, inspect_tree, run

STAGE_EXIT_CODES = {"stage1": 4, "stage2": 5, "stage3": 6, "mixdown": 7}

ENV_BACKEND = "SOUNDSTAGE_BACKEND"
ENV_OUT = "SOUNDSTAGE_OUT"


def _add_run_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--input", required=True, help="input descriptor JSON file")
    parser.add_argument("--config", help="run config JSON file")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--backend", help="scripted:PATH or http[s]://URL")
    parser.add_argument("--tools", help="'mock' or a tool endpoint map JSON file")
    parser.add_argument("--seed", type=int, help="mock synthesis hash salt")
    parser.add_argument("--parallel", type=int, help="stage-3 event concurrency")
    parser.add_argument("--plan-only", action="store_true", help="stop after stage 1")


def _build_config(args: argparse.Namespace, plan_only: bool = False) -> RunConfig:
    config = RunConfig.from_file(args.config) if args.config else RunConfig()
    backend = args.backend or os.environ.get(ENV_BACKEND)
    if backend:
        config.backend = backend
    out = getattr(args, "out", None) or os.environ.get(ENV_OUT)
    if out:
        config.out_dir = out
    if getattr(args, "tools", None):
        if args.tools == "mock":
            config.tools = {"*": "mock"}
        else:
            try:
                with open(args.tools, "r", encoding="utf-8") as fh:
                    config.tools = {str(k): str(v) for k, v in json.load(fh).items()}
            except (OSError, ValueError, AttributeError) as exc:
                raise ConfigError(f"cannot read tools map {args.tools}: {exc}") from exc
    if getattr(args, "seed", None) is not None:
        config.seed = args.seed
    if getattr(args, "parallel", None) is not None:
        config.parallel = args.parallel
    if plan_only or getattr(args, "plan_only", False):
        config.plan_only = True
    return config


def _cmd_run(args: argparse.Namespace, plan_only: bool = False) -> int:
    config = _build_config(args, plan_only)
    descriptor = input_from_file(args.input)
    result = run(config, descriptor)
    summary = {
        "out_dir": str(result.out_dir),
        "plan": str(result.plan_path),
        "report": str(result.report_path),
    }
    if result.mix_path is not None:
        summary["mix"] = str(result.mix_path)
        summary["stems"] = len(result.stem_paths)
    print(json.dumps(summary, indent=2))
    return 0


def _cmd_bench(args: argparse.Namespace) -> int:
    config = _build_config(args)
    rows = bench(config, args.manifest)
    failed = [r["id"] for r in rows if not r["ok"]]
    print(json.dumps({"cases": len(rows), "failed": failed}, indent=2))
    return 0


def _cmd_inspect(args: argparse.Namespace) -> int:
    text, _ = inspect_tree(args.trace, dot_path=args.dot)
    print(text)
    if args.dot:
        print(f"DOT written to {args.dot}", file=sys.stderr)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="soundstage",
        description="Multi-agent audio production pipeline",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    run_parser = commands.add_parser("run", help="run the full pipeline")
    _add_run_flags(run_parser)

    plan_parser = commands.add_parser("plan", help="run stage 1 only and write the plan")
    _add_run_flags(plan_parser)

    bench_parser = commands.add_parser("bench", help="run a benchmark manifest")
    bench_parser.add_argument("--manifest", required=True, help="bench manifest JSON file")
    bench_parser.add_argument("--config", help="run config JSON file")
    bench_parser.add_argument("--out", help="output directory")
    bench_parser.add_argument("--backend", help="scripted:PATH or http[s]://URL")
    bench_parser.add_argument("--tools", help="'mock' or a tool endpoint map JSON file")
    bench_parser.add_argument("--seed", type=int)
    bench_parser.add_argument("--parallel", type=int)

    inspect_parser = commands.add_parser("inspect-tree", help="render a stage-3 trace")
    inspect_parser.add_argument("trace", help="trace JSON file")
    inspect_parser.add_argument("--dot", help="also write a DOT file here")

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "plan":
            return _cmd_run(args, plan_only=True)
        if args.command == "bench":
            return _cmd_bench(args)
        if args.command == "inspect-tree":
            return _cmd_inspect(args)
        return 1
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except InputError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return 3
    except PipelineStageError as exc:
        print(f"pipeline error in {exc.stage}: {exc.cause}", file=sys.stderr)
        return STAGE_EXIT_CODES.get(exc.stage, 1)
    except TraceParseError as exc:
        print(f"trace error: {exc}", file=sys.stderr)
        return 8
    except ManifestError as exc:
        print(f"manifest error: {exc}", file=sys.stderr)
        return 9


if __name__ == "__main__":
    sys.exit(main())
