"""Stage 3: per-event generation as a budgeted tree search.

Each event gets its own tree: an initial node holding the assignment,
generation nodes trying candidate tools (priority candidate leftmost, tried
first), and refinement nodes that post-process a parent's artifact without
regenerating content. Evaluation verdicts drive the walk - accept returns
immediately, fixable grows a refinement chain, retry opens a sibling branch
(model switch first, then prompt adjustment). When the budget runs out the
best explored artifact wins.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

from . import mixer
from .errors import (
    AllBranchesFailed,
    BudgetExhausted,
    DecodeError,
    SchemaViolation,
    ToolError,
    ToolUnreachable,
)
from .events import AudioEvent, event_to_json_dict
from .experts import EventAssignment, _pin_spec
from .gateway import ToolGateway, ToolRequest
from .library import GenerationSpec, ToolLibrary
from .mixer import PostProcessAction, Stem
from .protocol import (
    ROLE_AUDIO_EVALUATOR,
    AgentBackend,
    Attachment,
    ask_structured,
    make_role,
    render_prompt,
)
from .replytext import extract_first_json
from .wav_io import AudioArtifact

SCORE_MIN = 1.0
SCORE_MAX = 5.0

ISSUE_TAGS = ("leading_silence", "noise", "low_volume", "clipped", "wrong_content", "off_style", "other")

FIXABLE_TAGS = ("leading_silence", "noise", "low_volume", "clipped")

#: fallback thresholds when the evaluator gives scores but no verdict
RETRY_MEAN_BELOW = 2.5
ACCEPT_ALL_DIMS_AT_LEAST = 3.5


@dataclass
class EvalIssue:
    tag: str
    detail: str = ""


@dataclass
class EvalReport:
    quality: float
    alignment: float
    aesthetics: float
    issues: list[EvalIssue] = field(default_factory=list)
    verdict: str | None = None  # accept | fixable | retry | None

    @property
    def mean_score(self) -> float:
        return (self.quality + self.alignment + self.aesthetics) / 3.0

    def has_tag(self, tag: str) -> bool:
        return any(issue.tag == tag for issue in self.issues)


@dataclass
class Budget:
    max_retries: int = 2  # extra sibling generation nodes after the first
    max_fix_chain: int = 2  # refinement chain depth under one generation node

    def __post_init__(self):
        if self.max_retries < 0 or self.max_fix_chain < 0:
            raise ValueError("budget values must be >= 0")

    @property
    def node_cap(self) -> int:
        return 1 + (1 + self.max_retries) * (1 + self.max_fix_chain)


@dataclass
class ToTNode:
    id: str
    kind: str  # initial | generation | refinement
    parent: str | None
    payload: object  # EventAssignment | GenerationSpec | PostProcessAction
    order: int
    artifact: AudioArtifact | None = None
    artifact_path: str | None = None
    report: EvalReport | None = None
    status: str = "pending"  # pending | done | failed
    error: str | None = None
    children: list[str] = field(default_factory=list)


class GenerationTree:
    """Node store with recorded child order (left to right = trial order)."""

    def __init__(self, budget: Budget):
        self.budget = budget
        self.nodes: dict[str, ToTNode] = {}
        self.root: str | None = None
        self._counter = 0

    def add(self, kind: str, parent: str | None, payload: object) -> ToTNode:
        node = ToTNode(
            id=f"n{self._counter}", kind=kind, parent=parent, payload=payload, order=self._counter
        )
        self._counter += 1
        self.nodes[node.id] = node
        if parent is None:
            if self.root is not None:
                raise ValueError("tree already has a root")
            self.root = node.id
        else:
            self.nodes[parent].children.append(node.id)
        return node

    def depth(self, node_id: str) -> int:
        depth = 0
        node = self.nodes[node_id]
        while node.parent is not None:
            depth += 1
            node = self.nodes[node.parent]
        return depth

    def generation_nodes(self) -> list[ToTNode]:
        return [n for n in self.nodes.values() if n.kind == "generation"]

    def __len__(self) -> int:
        return len(self.nodes)


@dataclass
class NextStep:
    kind: str  # accept | refine | retry
    actions: list[PostProcessAction] = field(default_factory=list)


@dataclass
class RetryDecision:
    kind: str  # switch_model | adjust_prompt
    spec: GenerationSpec


@dataclass
class EventRunResult:
    stem: Stem
    tree: GenerationTree
    accepted: bool  # False when the stem came from best-branch fallback
    verdicts: list[str]


def _clamp(value: float) -> float:
    return max(SCORE_MIN, min(SCORE_MAX, value))


def parse_eval_report(text: str) -> EvalReport:
    value = extract_first_json(text)
    if not isinstance(value, dict):
        raise SchemaViolation("evaluation must be a JSON object")
    scores = {}
    for name in ("quality", "alignment", "aesthetics"):
        raw = value.get(name)
        if isinstance(raw, bool) or not isinstance(raw, (int, float)):
            raise SchemaViolation(f"score {name!r} must be a number", field=name)
        scores[name] = _clamp(float(raw))
    issues = []
    for item in value.get("issues") or []:
        if not isinstance(item, dict) or "tag" not in item:
            raise SchemaViolation("each issue needs a tag", field="issues")
        tag = item["tag"] if item["tag"] in ISSUE_TAGS else "other"
        issues.append(EvalIssue(tag=tag, detail=str(item.get("detail", ""))))
    verdict = value.get("verdict")
    if verdict is not None and verdict not in ("accept", "fixable", "retry"):
        raise SchemaViolation(f"unknown verdict {verdict!r}", field="verdict")
    report = EvalReport(issues=issues, verdict=verdict, **scores)
    if report.verdict == "accept" and report.has_tag("wrong_content"):
        # never trust an accept that admits the content is wrong
        report.verdict = "retry"
    return report


def evaluate(
    backend: AgentBackend,
    artifact: AudioArtifact,
    event: AudioEvent,
    spec: GenerationSpec,
    artifact_ref: str = "",
    max_repairs: int = 2,
) -> EvalReport:
    """Ask the evaluator role for a three-dimension report on one artifact."""
    role = make_role(ROLE_AUDIO_EVALUATOR, "evaluate_audio")
    messages = render_prompt(
        role,
        {
            "event_json": json.dumps(event_to_json_dict(event)),
            "prompt": spec.prompt,
        },
        attachments=(Attachment(kind="audio", ref=artifact_ref or "inline"),),
    )
    return ask_structured(backend, role, messages, parse_eval_report, "eval_report", max_repairs)


def _actions_for_issues(report: EvalReport, external_fix_tools: frozenset[str]) -> list[PostProcessAction]:
    actions: list[PostProcessAction] = []
    for issue in report.issues:
        if issue.tag == "leading_silence":
            actions.append(PostProcessAction(
                kind="trim_leading_silence",
                params={
                    "threshold_db": mixer.DEFAULT_SILENCE_THRESHOLD_DB,
                    "min_window_ms": mixer.DEFAULT_SILENCE_WINDOW_MS,
                },
            ))
        elif issue.tag == "noise" and "AudioSR" in external_fix_tools:
            actions.append(PostProcessAction(
                kind="external", tool_id="AudioSR", action="super_resolution", params={}
            ))
        elif issue.tag == "low_volume":
            actions.append(PostProcessAction(kind="apply_gain", params={"gain_db": 6.0}))
        elif issue.tag == "clipped":
            actions.append(PostProcessAction(kind="apply_gain", params={"target_peak": 0.95}))
    return actions


def classify(report: EvalReport, external_fix_tools: frozenset[str] = frozenset()) -> NextStep:
    """Map a report to the next search move.

    The evaluator's verdict wins when present; otherwise scores decide:
    a mean under 2.5 retries, fixable issue tags with a decent mean refine,
    and acceptance needs every dimension at 3.5 or better.
    """
    if report.verdict == "accept":
        return NextStep(kind="accept")
    if report.verdict == "retry":
        return NextStep(kind="retry")
    if report.verdict == "fixable":
        actions = _actions_for_issues(report, external_fix_tools)
        if actions:
            return NextStep(kind="refine", actions=actions)
        return NextStep(kind="retry")  # nothing mechanically fixable
    mean = report.mean_score
    if mean < RETRY_MEAN_BELOW:
        return NextStep(kind="retry")
    if any(report.has_tag(tag) for tag in FIXABLE_TAGS):
        actions = _actions_for_issues(report, external_fix_tools)
        if actions:
            return NextStep(kind="refine", actions=actions)
        return NextStep(kind="retry")
    if all(s >= ACCEPT_ALL_DIMS_AT_LEAST for s in (report.quality, report.alignment, report.aesthetics)):
        return NextStep(kind="accept")
    return NextStep(kind="retry")


def _failure_detail(node: ToTNode) -> str:
    if node.report is None:
        return node.error or "generation failed"
    parts = [f"scores q={node.report.quality} a={node.report.alignment} ae={node.report.aesthetics}"]
    for issue in node.report.issues:
        parts.append(f"{issue.tag}: {issue.detail}" if issue.detail else issue.tag)
    return "; ".join(parts)


def retry_strategy(
    tree: GenerationTree,
    assignment: EventAssignment,
    backend: AgentBackend,
    library: ToolLibrary,
    max_repairs: int = 2,
) -> RetryDecision:
    """Pick the next sibling attempt: an unused candidate model if one is
    left, else a prompt adjustment written by the owning expert."""
    generations = tree.generation_nodes()
    if len(generations) > tree.budget.max_retries:
        raise BudgetExhausted(
            f"{len(generations)} generation attempts already made, budget allows "
            f"{1 + tree.budget.max_retries}"
        )
    used = {node.payload.tool_id for node in generations}
    for tool_id in assignment.candidates:
        if tool_id not in used:
            return RetryDecision(kind="switch_model", spec=assignment.specs[tool_id])
    last = max(generations, key=lambda n: n.order)
    role = make_role("expert", "adjust_prompt", audio_type=assignment.event.audio_type)
    spec = last.payload
    messages = render_prompt(
        role,
        {
            "tool_id": spec.tool_id,
            "failure_detail": _failure_detail(last),
            "spec_json": json.dumps({"prompt": spec.prompt, "extra": spec.extra}),
        },
    )
    body = ask_structured(backend, role, messages, _parse_adjusted_spec, "generation_spec", max_repairs)
    new_spec = _pin_spec(body, spec.tool_id, assignment.event, library)
    return RetryDecision(kind="adjust_prompt", spec=new_spec)


def _parse_adjusted_spec(text: str) -> dict:
    value = extract_first_json(text)
    if not isinstance(value, dict):
        raise SchemaViolation("spec must be a JSON object")
    if not isinstance(value.get("prompt"), str) or not value["prompt"].strip():
        raise SchemaViolation("spec prompt must be a non-empty string", field="prompt")
    return value


def best_result(tree: GenerationTree) -> ToTNode:
    """The explored node with the best mean score; ties go to the shallower
    node, then the one tried earlier (leftmost)."""
    scored = [n for n in tree.nodes.values() if n.artifact is not None and n.report is not None]
    if not scored:
        raise AllBranchesFailed("no node produced an evaluable artifact")
    return min(scored, key=lambda n: (-n.report.mean_score, tree.depth(n.id), n.order))


def _make_stem(assignment: EventAssignment, artifact: AudioArtifact) -> Stem:
    trimmed = mixer.truncate(artifact, assignment.event.span_s)
    return Stem(
        event_id=f"event_{assignment.event_index:03d}",
        artifact=trimmed,
        start_time=assignment.event.start_time,
        gain=assignment.event.volume,
    )


def _apply_action(
    gateway: ToolGateway, artifact: AudioArtifact, action: PostProcessAction
) -> tuple[AudioArtifact, str | None]:
    if action.kind == "external":
        request = ToolRequest(tool_id=action.tool_id, action=action, input_artifact=artifact)
        result = gateway.invoke(request)
        path = str(gateway.store.path_for(request)) if gateway.store is not None else None
        return result, path
    result = mixer.apply_local_action(artifact, action)
    path = None
    if gateway.store is not None:
        request = ToolRequest(tool_id="local", action=action, input_artifact=artifact)
        path = str(gateway.store.save(request, result))
    return result, path


def run_event(
    assignment: EventAssignment,
    budget: Budget,
    gateway: ToolGateway,
    backend: AgentBackend,
    library: ToolLibrary,
    max_repairs: int = 2,
) -> EventRunResult:
    """Search one event's generation tree until acceptance or budget end.

    Returns the accepted stem, or the best explored branch when the budget
    runs out. Raises AllBranchesFailed only when no attempt anywhere produced
    an artifact.
    """
    external_fix_tools = frozenset(
        d.id for d in library.post_processors() if d.id in gateway.endpoints or "*" in gateway.endpoints
    )
    tree = GenerationTree(budget)
    root = tree.add("initial", None, assignment)
    root.status = "done"
    verdicts: list[str] = []
    spec = assignment.specs[assignment.candidates[0]]

    for attempt in range(1 + budget.max_retries):
        gen = tree.add("generation", root.id, spec)
        request = ToolRequest(tool_id=spec.tool_id, spec=spec)
        try:
            artifact = gateway.invoke(request)
        except (ToolUnreachable, ToolError, DecodeError) as exc:
            gen.status = "failed"
            gen.error = str(exc)
            verdicts.append("gateway_failed")
        else:
            gen.artifact = artifact
            if gateway.store is not None:
                gen.artifact_path = str(gateway.store.save(request, artifact))
            gen.status = "done"
            gen.report = evaluate(
                backend, artifact, assignment.event, spec, gen.artifact_path or "", max_repairs
            )
            step = classify(gen.report, external_fix_tools)
            verdicts.append(step.kind)
            if step.kind == "accept":
                return EventRunResult(_make_stem(assignment, artifact), tree, True, verdicts)
            if step.kind == "refine":
                outcome = _run_fix_chain(
                    tree, gen, step.actions, assignment, spec, gateway, backend,
                    external_fix_tools, verdicts, max_repairs,
                )
                if outcome is not None:
                    return EventRunResult(outcome, tree, True, verdicts)
        if attempt == budget.max_retries:
            break
        decision = retry_strategy(tree, assignment, backend, library, max_repairs)
        spec = decision.spec

    best = best_result(tree)
    return EventRunResult(_make_stem(assignment, best.artifact), tree, False, verdicts)


def _run_fix_chain(
    tree: GenerationTree,
    gen: ToTNode,
    actions: list[PostProcessAction],
    assignment: EventAssignment,
    spec: GenerationSpec,
    gateway: ToolGateway,
    backend: AgentBackend,
    external_fix_tools: frozenset[str],
    verdicts: list[str],
    max_repairs: int,
) -> Stem | None:
    """Grow a refinement chain under one generation node; a Stem means an
    accepted fix, None means the chain ended without acceptance."""
    queue = list(actions)
    current = gen
    for _ in range(tree.budget.max_fix_chain):
        if not queue:
            break
        action = queue.pop(0)
        node = tree.add("refinement", current.id, action)
        try:
            fixed, fixed_path = _apply_action(gateway, current.artifact, action)
        except (ToolUnreachable, ToolError, DecodeError) as exc:
            node.status = "failed"
            node.error = str(exc)
            verdicts.append("fix_failed")
            return None
        node.artifact = fixed
        node.artifact_path = fixed_path
        node.status = "done"
        node.report = evaluate(
            backend, fixed, assignment.event, spec, node.artifact_path or "", max_repairs
        )
        step = classify(node.report, external_fix_tools)
        verdicts.append(step.kind)
        if step.kind == "accept":
            return _make_stem(assignment, fixed)
        if step.kind == "retry":
            return None
        queue = step.actions
        current = node
    return None
