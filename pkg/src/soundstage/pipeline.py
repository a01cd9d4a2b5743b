"""End-to-end runner: stage 1 -> stage 2 -> stage 3 -> mixdown, plus the
bench harness and the trace inspector behind the CLI verbs.

Given the same scripted backend, mock tools, seed, and config, two runs
write byte-identical mixes, stems, traces, and reports; every path inside
the report is relative to the output directory for exactly that reason.
"""
from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from . import mixer
from .errors import (
    ConfigError,
    EngineError,
    InputError,
    ManifestError,
    PipelineStageError,
)
from .events import InputDescriptor, serialize_plan
from .experts import run_stage2
from .gateway import MOCK_SAMPLE_RATE, ArtifactStore, ToolGateway
from .library import ToolLibrary, default_library, load_library
from .planning import plan_loop
from .protocol import CountingBackend, HttpBackend, backend_from_descriptor
from .search import Budget, run_event
from .trace import load_trace, render_trace, trace_to_dot, write_trace
from .wav_io import write_wav

log = logging.getLogger(__name__)


@dataclass
class RunConfig:
    backend: str = "scripted:session.json"
    tools: dict[str, str] = field(default_factory=lambda: {"*": "mock"})
    max_retries: int = 2
    max_fix_chain: int = 2
    stage1_max_rounds: int = 3
    self_refine_iters: int = 2
    max_repairs: int = 2
    out_dir: str = "out"
    seed: int = 0
    target_rate: int = mixer.DEFAULT_TARGET_RATE
    parallel: int = 2
    library_path: str | None = None
    plan_only: bool = False

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        try:
            raw = json.loads(Path(path).read_text("utf-8"))
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        config = cls()
        tools = raw.pop("tools", None)
        if tools == "mock":
            config.tools = {"*": "mock"}
        elif isinstance(tools, dict):
            config.tools = {str(k): str(v) for k, v in tools.items()}
        elif tools is not None:
            raise ConfigError("tools must be 'mock' or a tool_id -> endpoint map")
        for key, value in raw.items():
            if not hasattr(config, key):
                raise ConfigError(f"unknown config key: {key!r}")
            setattr(config, key, value)
        return config

    def load_tool_library(self) -> ToolLibrary:
        if self.library_path:
            return load_library(self.library_path)
        return default_library()

    def validate(self, library: ToolLibrary) -> None:
        """Startup checks that must fail before any backend call."""
        if self.target_rate not in mixer.SUPPORTED_RATES:
            raise ConfigError(f"target_rate {self.target_rate} not in {mixer.SUPPORTED_RATES}")
        if self.parallel < 1:
            raise ConfigError("parallel must be >= 1")
        if self.max_retries < 0 or self.max_fix_chain < 0:
            raise ConfigError("budget values must be >= 0")
        if self.stage1_max_rounds < 1:
            raise ConfigError("stage1_max_rounds must be >= 1")
        if self.self_refine_iters < 0 or self.max_repairs < 0:
            raise ConfigError("self_refine_iters and max_repairs must be >= 0")
        for descriptor in library:
            endpoint = self.tools.get(descriptor.id, self.tools.get("*"))
            if endpoint is None:
                raise ConfigError(
                    f"tool {descriptor.id!r} has no endpoint and no '*' default is set"
                )


def input_from_file(path) -> InputDescriptor:
    try:
        raw = json.loads(Path(path).read_text("utf-8"))
    except (OSError, ValueError) as exc:
        raise InputError(f"cannot read input {path}: {exc}") from exc
    descriptor = InputDescriptor(
        text=raw.get("text"),
        image_refs=list(raw.get("image_refs") or []),
        video_ref=raw.get("video_ref"),
        precomputed_caption=raw.get("precomputed_caption"),
        duration_s=raw.get("duration_s"),
    )
    if not descriptor.is_valid():
        raise InputError("input needs at least one of text, image_refs, video_ref")
    return descriptor


@dataclass
class RunResult:
    out_dir: Path
    report: dict
    mix_path: Path | None
    stem_paths: list[Path]
    plan_path: Path
    trace_paths: list[Path]
    report_path: Path


def _write_report(out_dir: Path, report: dict) -> Path:
    path = out_dir / "report.json"
    path.write_text(json.dumps(report, indent=2) + "\n", "utf-8")
    return path


def run(config: RunConfig, descriptor: InputDescriptor) -> RunResult:
    """Execute the full pipeline; artifacts land under config.out_dir."""
    library = config.load_tool_library()
    config.validate(library)
    if not descriptor.is_valid():
        raise InputError("input needs at least one of text, image_refs, video_ref")

    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    backend = CountingBackend(backend_from_descriptor(config.backend))

    report: dict = {"seed": config.seed, "target_rate": config.target_rate}

    try:
        stage1 = plan_loop(backend, descriptor, config.stage1_max_rounds, config.max_repairs)
    except EngineError as exc:
        raise PipelineStageError("stage1", exc) from exc
    plan_path = out_dir / "plan.json"
    plan_path.write_text(serialize_plan(stage1.plan) + "\n", "utf-8")
    stage1_calls = backend.snapshot()
    report["stage1"] = {
        "approved": stage1.approved,
        "rounds": stage1.rounds,
        "verdicts": stage1.verdicts,
        "backend_calls": stage1_calls,
    }
    report["plan"] = json.loads(serialize_plan(stage1.plan))

    if config.plan_only:
        report_path = _write_report(out_dir, report)
        return RunResult(out_dir, report, None, [], plan_path, [], report_path)

    try:
        stage2 = run_stage2(
            backend, stage1.plan, library,
            self_refine_iters=config.self_refine_iters, max_repairs=config.max_repairs,
        )
    except EngineError as exc:
        raise PipelineStageError("stage2", exc) from exc
    stage2_calls = {
        role: count - stage1_calls.get(role, 0)
        for role, count in backend.snapshot().items()
        if count - stage1_calls.get(role, 0) > 0
    }
    report["stage2"] = {
        "verdicts": stage2.verdicts,
        "collab_passes": stage2.collab_passes,
        "backend_calls": stage2_calls,
        "assignments": [
            {
                "event_index": a.event_index,
                "candidates": a.candidates,
                "specs": {
                    tool_id: {"prompt": s.prompt, "duration_s": s.duration_s,
                              "extra": dict(sorted(s.extra.items()))}
                    for tool_id, s in a.specs.items()
                },
            }
            for a in stage2.assignments
        ],
    }

    store = ArtifactStore(out_dir / "artifacts")
    gateway = ToolGateway(
        config.tools, store=store, sample_rate=MOCK_SAMPLE_RATE, seed=config.seed
    )
    budget = Budget(max_retries=config.max_retries, max_fix_chain=config.max_fix_chain)
    pre_stage3 = backend.snapshot()

    # A scripted backend replays (role, turn) pairs, so concurrent events
    # would race for turns; replay runs are serialized to stay byte-exact.
    workers = config.parallel if isinstance(backend.inner, HttpBackend) else 1

    def run_one(assignment):
        return run_event(assignment, budget, gateway, backend, library, config.max_repairs)

    try:
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(run_one, stage2.assignments))
        else:
            results = [run_one(a) for a in stage2.assignments]
    except EngineError as exc:
        raise PipelineStageError("stage3", exc) from exc

    stems_dir = out_dir / "stems"
    traces_dir = out_dir / "traces"
    stems_dir.mkdir(exist_ok=True)
    traces_dir.mkdir(exist_ok=True)
    stem_paths: list[Path] = []
    trace_paths: list[Path] = []
    stage3_report = []
    stems = []
    for assignment, result in zip(stage2.assignments, results):
        stem = result.stem
        stems.append(stem)
        stem_path = stems_dir / f"{stem.event_id}.wav"
        write_wav(stem_path, stem.artifact)
        stem_paths.append(stem_path)
        trace_path = traces_dir / f"{stem.event_id}.json"
        write_trace(trace_path, result.tree, assignment.event_index)
        trace_paths.append(trace_path)
        stage3_report.append(
            {
                "event_index": assignment.event_index,
                "accepted": result.accepted,
                "verdicts": result.verdicts,
                "node_count": len(result.tree),
                "stem": f"stems/{stem.event_id}.wav",
                "trace": f"traces/{stem.event_id}.json",
            }
        )
    stage3_calls = {
        role: count - pre_stage3.get(role, 0)
        for role, count in backend.snapshot().items()
        if count - pre_stage3.get(role, 0) > 0
    }
    report["stage3"] = {"events": stage3_report, "backend_calls": stage3_calls}

    try:
        mix = mixer.mixdown(stems, config.target_rate)
    except EngineError as exc:
        raise PipelineStageError("mixdown", exc) from exc
    mix_path = out_dir / "mix.wav"
    write_wav(mix_path, mix)
    report["mix"] = {
        "path": "mix.wav",
        "duration_s": mix.duration_s,
        "sample_rate": mix.sample_rate,
        "frames": mix.frames,
        "stems": len(stems),
    }
    report["gateway_warnings"] = gateway.warnings
    report["backend_calls_total"] = backend.total
    report_path = _write_report(out_dir, report)
    return RunResult(out_dir, report, mix_path, stem_paths, plan_path, trace_paths, report_path)


def load_manifest(path) -> list[dict]:
    try:
        raw = json.loads(Path(path).read_text("utf-8"))
    except (OSError, ValueError) as exc:
        raise ManifestError(f"cannot read manifest {path}: {exc}") from exc
    cases = raw.get("cases") if isinstance(raw, dict) else raw
    if not isinstance(cases, list) or not cases:
        raise ManifestError("manifest must hold a non-empty case list")
    seen = set()
    for case in cases:
        if not isinstance(case, dict) or "id" not in case or "input" not in case:
            raise ManifestError("every case needs id and input")
        if case["id"] in seen:
            raise ManifestError(f"duplicate case id {case['id']!r}")
        seen.add(case["id"])
    return cases


def _input_from_case(case: dict) -> InputDescriptor:
    raw = case["input"]
    descriptor = InputDescriptor(
        text=raw.get("text"),
        image_refs=list(raw.get("image_refs") or []),
        video_ref=raw.get("video_ref"),
        precomputed_caption=raw.get("precomputed_caption"),
        duration_s=raw.get("duration_s", case.get("duration_s")),
    )
    if not descriptor.is_valid():
        raise InputError(f"case {case['id']!r}: input has no content")
    return descriptor


BENCH_COLUMNS = (
    "id", "ok", "events", "expected_events", "event_match",
    "stems", "mix_duration_s", "nodes_total", "error",
)


def bench(config: RunConfig, manifest_path) -> list[dict]:
    """Run every manifest case in isolation; one bad case never stops the rest."""
    cases = load_manifest(manifest_path)
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows: list[dict] = []
    for case in cases:
        row = {key: "" for key in BENCH_COLUMNS}
        row["id"] = case["id"]
        expected = case.get("expected_event_count")
        row["expected_events"] = expected if expected is not None else ""
        try:
            descriptor = _input_from_case(case)
            case_config = RunConfig(**{**config.__dict__, "out_dir": str(out_dir / case["id"])})
            result = run(case_config, descriptor)
            events = len(result.report["plan"]["events"])
            row["ok"] = True
            row["events"] = events
            row["event_match"] = (expected is None) or (events == expected)
            row["stems"] = result.report.get("mix", {}).get("stems", 0)
            row["mix_duration_s"] = result.report.get("mix", {}).get("duration_s", "")
            row["nodes_total"] = sum(
                e["node_count"] for e in result.report.get("stage3", {}).get("events", [])
            )
        except Exception as exc:  # isolation: record and move on
            row["ok"] = False
            row["error"] = str(exc)
            row["event_match"] = False
        rows.append(row)
    json_path = out_dir / "bench_results.json"
    json_path.write_text(json.dumps(rows, indent=2) + "\n", "utf-8")
    csv_path = out_dir / "bench_results.csv"
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=BENCH_COLUMNS)
        writer.writeheader()
        writer.writerows(rows)
    return rows


def inspect_tree(trace_path, dot_path=None) -> tuple[str, str]:
    """Render a trace for humans and as DOT; returns (text, dot)."""
    trace = load_trace(trace_path)
    text = render_trace(trace)
    dot = trace_to_dot(trace)
    if dot_path is not None:
        Path(dot_path).write_text(dot + "\n", "utf-8")
    return text, dot
