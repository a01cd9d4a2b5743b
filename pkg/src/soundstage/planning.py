"""Stage 1: decompose the input into an event plan under supervisor review.

The planner proposes, the plan supervisor approves / suggests revisions /
rewrites, and the loop runs until approval or the round cap. Mechanical
validation always outranks the supervisor: a plan with violations can never
come out approved, whatever the agent said.
"""
from __future__ import annotations

from dataclasses import dataclass, field

from .errors import SchemaViolation, StructuredParseFailed
from .events import (
    EventPlan,
    InputDescriptor,
    parse_plan,
    plan_from_json_value,
    serialize_plan,
    validate_plan,
)
from .protocol import (
    ROLE_PLAN_SUPERVISOR,
    ROLE_PLANNER,
    AgentBackend,
    Attachment,
    ask_structured,
    complete,
    make_role,
    render_prompt,
)
from .replytext import extract_first_json

DEFAULT_MAX_ROUNDS = 3

VERDICT_DECISIONS = ("approve", "revise", "rewrite")


@dataclass
class PlanVerdict:
    decision: str  # approve | revise | rewrite
    suggestions: list[str] = field(default_factory=list)
    replacement_plan: EventPlan | None = None


@dataclass
class Stage1Result:
    plan: EventPlan
    approved: bool  # False means best-effort at the round cap
    rounds: int
    verdicts: list[str]


def parse_plan_verdict(text: str) -> PlanVerdict:
    value = extract_first_json(text)
    if not isinstance(value, dict):
        raise SchemaViolation("verdict must be a JSON object")
    decision = value.get("decision")
    if decision not in VERDICT_DECISIONS:
        raise SchemaViolation(f"decision must be one of {VERDICT_DECISIONS}, got {decision!r}",
                              field="decision")
    raw_suggestions = value.get("suggestions") or []
    if not isinstance(raw_suggestions, list) or any(not isinstance(s, str) for s in raw_suggestions):
        raise SchemaViolation("suggestions must be a list of strings", field="suggestions")
    if decision == "revise" and not raw_suggestions:
        raise SchemaViolation("revise verdict needs at least one suggestion", field="suggestions")
    replacement = None
    if decision == "rewrite":
        raw_plan = value.get("replacement_plan")
        if raw_plan is None:
            raise SchemaViolation("rewrite verdict needs a replacement_plan", field="replacement_plan")
        replacement = plan_from_json_value(raw_plan)
    return PlanVerdict(decision=decision, suggestions=list(raw_suggestions), replacement_plan=replacement)


def _input_attachments(descriptor: InputDescriptor) -> tuple[Attachment, ...]:
    attachments = [Attachment(kind="image", ref=ref) for ref in descriptor.image_refs]
    if descriptor.video_ref:
        attachments.append(Attachment(kind="video", ref=descriptor.video_ref))
    return tuple(attachments)


def _duration_text(descriptor: InputDescriptor) -> str:
    return "unknown" if descriptor.duration_s is None else f"{descriptor.duration_s:.3f}"


def caption_visuals(backend: AgentBackend, descriptor: InputDescriptor) -> str:
    """Get a scene caption for visual inputs; zero backend calls when a
    caption was precomputed or the input carries no visuals."""
    if descriptor.precomputed_caption:
        return descriptor.precomputed_caption
    if not descriptor.has_visuals():
        return ""
    role = make_role(ROLE_PLANNER, "caption")
    messages = render_prompt(
        role,
        {"input_text": descriptor.text or "(none)"},
        attachments=_input_attachments(descriptor),
    )
    return complete(backend, role, messages).strip()


def decompose(
    backend: AgentBackend,
    descriptor: InputDescriptor,
    scene_caption: str = "",
    max_repairs: int = 2,
) -> EventPlan:
    """Ask the planner for the structured event plan."""
    role = make_role(ROLE_PLANNER, "decompose")
    messages = render_prompt(
        role,
        {
            "input_text": descriptor.text or "(see attached media)",
            "scene_caption": scene_caption or "(none)",
            "duration": _duration_text(descriptor),
        },
        attachments=_input_attachments(descriptor),
    )
    plan = ask_structured(backend, role, messages, parse_plan, "event_plan", max_repairs)
    if scene_caption:
        plan.scene_caption = scene_caption
    if plan.total_duration is None:
        plan.total_duration = descriptor.duration_s
    return plan


def _revise(
    backend: AgentBackend,
    plan: EventPlan,
    suggestions: list[str],
    descriptor: InputDescriptor,
    max_repairs: int = 2,
) -> EventPlan:
    role = make_role(ROLE_PLANNER, "revise_plan")
    messages = render_prompt(
        role,
        {
            "plan_json": serialize_plan(plan),
            "suggestions": "\n".join(f"- {s}" for s in suggestions),
        },
    )
    revised = ask_structured(backend, role, messages, parse_plan, "event_plan", max_repairs)
    revised.scene_caption = revised.scene_caption or plan.scene_caption
    if revised.total_duration is None:
        revised.total_duration = plan.total_duration or descriptor.duration_s
    return revised


def supervise_plan(
    backend: AgentBackend,
    plan: EventPlan,
    descriptor: InputDescriptor,
    max_repairs: int = 2,
) -> PlanVerdict:
    """One supervision verdict; mechanical findings ride along in the prompt."""
    violations = validate_plan(plan, descriptor.duration_s)
    role = make_role(ROLE_PLAN_SUPERVISOR, "supervise_plan")
    messages = render_prompt(
        role,
        {
            "input_text": descriptor.text or "(see attached media)",
            "scene_caption": plan.scene_caption or "(none)",
            "duration": _duration_text(descriptor),
            "plan_json": serialize_plan(plan),
            "violations": "; ".join(str(v) for v in violations) if violations else "none",
        },
    )
    return ask_structured(backend, role, messages, parse_plan_verdict, "plan_verdict", max_repairs)


def plan_loop(
    backend: AgentBackend,
    descriptor: InputDescriptor,
    max_rounds: int = DEFAULT_MAX_ROUNDS,
    max_repairs: int = 2,
) -> Stage1Result:
    """Propose / supervise until approval or the round cap.

    Every iteration spends one supervision round. A best-effort plan comes
    back unapproved when the cap is hit; parse failures propagate only when
    no round ever produced a plan.
    """
    if max_rounds < 1:
        raise ValueError("max_rounds must be >= 1")
    caption = caption_visuals(backend, descriptor)
    plan: EventPlan | None = None
    pending_suggestions: list[str] | None = None
    verdicts: list[str] = []
    last_failure: StructuredParseFailed | None = None
    rounds = 0
    for _ in range(max_rounds):
        rounds += 1
        try:
            if plan is None:
                plan = decompose(backend, descriptor, caption, max_repairs)
            elif pending_suggestions:
                plan = _revise(backend, plan, pending_suggestions, descriptor, max_repairs)
                pending_suggestions = None
        except StructuredParseFailed as exc:
            last_failure = exc
            if plan is None:
                verdicts.append("planner_failed")
                continue
            pending_suggestions = None
        try:
            verdict = supervise_plan(backend, plan, descriptor, max_repairs)
        except StructuredParseFailed as exc:
            last_failure = exc
            verdicts.append("supervisor_failed")
            continue
        violations = validate_plan(plan, descriptor.duration_s)
        if verdict.decision == "approve" and violations:
            # supervisor trust stops where mechanical validity starts
            verdict = PlanVerdict(decision="revise", suggestions=[str(v) for v in violations])
        verdicts.append(verdict.decision)
        if verdict.decision == "approve":
            return Stage1Result(plan=plan, approved=True, rounds=rounds, verdicts=verdicts)
        if verdict.decision == "rewrite":
            plan = verdict.replacement_plan
            if caption and not plan.scene_caption:
                plan.scene_caption = caption
            if plan.total_duration is None:
                plan.total_duration = descriptor.duration_s
            pending_suggestions = None
        else:
            pending_suggestions = verdict.suggestions
    if plan is None:
        raise last_failure if last_failure is not None else StructuredParseFailed(
            0, SchemaViolation("no plan produced")
        )
    return Stage1Result(plan=plan, approved=False, rounds=rounds, verdicts=verdicts)
