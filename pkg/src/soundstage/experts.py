"""Stage 2: per-audio-type experts pick tools and write generation specs.

Each event goes to the expert for its audio type. The expert orders up to
two candidate tools, writes a tool-specific spec per candidate, self-reviews
its own work, then all present experts take one collaborative pass over the
collective plan before the assignment supervisor signs off.

Event timing is stage-1 authority: nothing in this stage may move a
timestamp, so spec durations are always re-pinned to the event bounds.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace

from .errors import NoToolForType, SchemaViolation
from .events import AudioEvent, AudioType, EventPlan, event_to_json_dict
from .library import GenerationSpec, ToolLibrary, descriptor_to_json
from .protocol import (
    ROLE_ASSIGNMENT_SUPERVISOR,
    AgentBackend,
    ask_structured,
    make_role,
    render_prompt,
)
from .replytext import extract_first_json

log = logging.getLogger(__name__)

#: Table-order pass sequence for collaborative refinement.
EXPERT_ORDER = (
    AudioType.SOUND_EFFECT,
    AudioType.SPEECH,
    AudioType.MUSIC,
    AudioType.SONG,
)

MAX_CANDIDATES = 2

DEFAULT_SELF_REFINE_ITERS = 2

#: extra keys other-type experts may touch during collaboration
CROSS_CUTTING_EXTRA_KEYS = ("style", "volume_hint")


@dataclass
class EventAssignment:
    event: AudioEvent
    event_index: int
    candidates: list[str]
    specs: dict[str, GenerationSpec]


@dataclass
class AssignmentVerdict:
    decision: str
    suggestions: list[str] = field(default_factory=list)
    # event index -> tool id -> replacement spec body
    replacement_specs: dict[int, dict[str, dict]] | None = None


@dataclass
class Stage2Result:
    assignments: list[EventAssignment]
    verdicts: list[str]
    collab_passes: int


def route(plan: EventPlan) -> dict[AudioType, list[AudioEvent]]:
    """Partition events by audio type, preserving plan order inside each type."""
    buckets: dict[AudioType, list[AudioEvent]] = {}
    for ev in plan.events:
        buckets.setdefault(ev.audio_type, []).append(ev)
    return buckets


def _pin_spec(spec_body: dict, tool_id: str, event: AudioEvent, library: ToolLibrary) -> GenerationSpec:
    """Build a spec from an agent-supplied body, enforcing engine invariants:
    tool id and duration come from us, lyric-driven tools always get lyrics."""
    prompt = spec_body.get("prompt")
    if not isinstance(prompt, str) or not prompt.strip():
        raise SchemaViolation("spec prompt must be a non-empty string", field="prompt")
    extra_raw = spec_body.get("extra") or {}
    if not isinstance(extra_raw, dict):
        raise SchemaViolation("spec extra must be an object", field="extra")
    extra = {str(k): str(v) for k, v in extra_raw.items()}
    descriptor = library.get(tool_id)
    if descriptor is not None and "lyrics" in descriptor.input_modalities and "lyrics" not in extra:
        extra["lyrics"] = event.description
    return GenerationSpec(tool_id=tool_id, prompt=prompt.strip(), duration_s=event.span_s, extra=extra)


def _parse_candidates(text: str) -> list[str]:
    value = extract_first_json(text)
    if isinstance(value, dict):
        value = value.get("candidates")
    if not isinstance(value, list) or any(not isinstance(v, str) for v in value):
        raise SchemaViolation("candidates must be a list of tool id strings", field="candidates")
    return value


def select_candidates(
    backend: AgentBackend,
    event: AudioEvent,
    library: ToolLibrary,
    scene_caption: str = "",
    max_repairs: int = 2,
) -> list[str]:
    """Expert-ordered candidate tools for one event, at most two.

    Unknown or non-covering ids from the expert are dropped; an empty result
    falls back to every covering generator in library order.
    """
    covering = library.generators_for(event.audio_type)
    if not covering:
        raise NoToolForType(event.audio_type.value)
    role = make_role("expert", "select_tools", audio_type=event.audio_type)
    messages = render_prompt(
        role,
        {
            "event_json": json.dumps(event_to_json_dict(event)),
            "scene_caption": scene_caption or "(none)",
            "tools_json": json.dumps([descriptor_to_json(d) for d in covering], indent=2),
        },
    )
    raw = ask_structured(backend, role, messages, _parse_candidates, "candidate_list", max_repairs)
    covering_ids = [d.id for d in covering]
    picked: list[str] = []
    for tool_id in raw:
        if tool_id in covering_ids and tool_id not in picked:
            picked.append(tool_id)
    if not picked:
        picked = covering_ids
    return picked[:MAX_CANDIDATES]


def _parse_spec_body(text: str) -> dict:
    value = extract_first_json(text)
    if not isinstance(value, dict):
        raise SchemaViolation("spec must be a JSON object")
    if not isinstance(value.get("prompt"), str) or not value["prompt"].strip():
        raise SchemaViolation("spec prompt must be a non-empty string", field="prompt")
    return value


def refine_spec(
    backend: AgentBackend,
    event: AudioEvent,
    tool_id: str,
    library: ToolLibrary,
    scene_caption: str = "",
    max_repairs: int = 2,
) -> GenerationSpec:
    """One tool-specific spec, written by the event's expert."""
    descriptor = library.get(tool_id)
    if descriptor is None or not descriptor.covers(event.audio_type):
        raise NoToolForType(event.audio_type.value)
    role = make_role("expert", "refine_spec", audio_type=event.audio_type)
    messages = render_prompt(
        role,
        {
            "tool_id": tool_id,
            "tool_task": descriptor.task,
            "tool_characteristics": descriptor.characteristics,
            "event_json": json.dumps(event_to_json_dict(event)),
            "scene_caption": scene_caption or "(none)",
        },
    )
    body = ask_structured(backend, role, messages, _parse_spec_body, "generation_spec", max_repairs)
    return _pin_spec(body, tool_id, event, library)


def _specs_json(assignment: EventAssignment) -> str:
    return json.dumps(
        {
            tool_id: {"prompt": spec.prompt, "duration_s": spec.duration_s, "extra": spec.extra}
            for tool_id, spec in assignment.specs.items()
        },
        indent=2,
    )


def _parse_refine_reply(text: str) -> dict:
    value = extract_first_json(text)
    if not isinstance(value, dict):
        raise SchemaViolation("reply must be a JSON object")
    if value.get("no_changes") is True:
        return {"no_changes": True}
    specs = value.get("specs")
    if not isinstance(specs, dict) or not specs:
        raise SchemaViolation("reply needs no_changes: true or a non-empty specs object", field="specs")
    return {"specs": specs}


def self_refine(
    backend: AgentBackend,
    assignment: EventAssignment,
    library: ToolLibrary,
    max_iters: int = DEFAULT_SELF_REFINE_ITERS,
    max_repairs: int = 2,
) -> EventAssignment:
    """Expert critiques its own specs; stops at a no-change reply or the cap."""
    if max_iters < 0:
        raise ValueError("max_iters must be >= 0")
    current = assignment
    role = make_role("expert", "self_refine", audio_type=assignment.event.audio_type)
    for _ in range(max_iters):
        messages = render_prompt(
            role,
            {
                "event_json": json.dumps(event_to_json_dict(current.event)),
                "specs_json": _specs_json(current),
            },
        )
        reply = ask_structured(backend, role, messages, _parse_refine_reply, "self_refine", max_repairs)
        if reply.get("no_changes"):
            break
        new_specs = dict(current.specs)
        for tool_id, body in reply["specs"].items():
            if tool_id not in current.specs:
                log.warning("self_refine touched unknown tool %r; ignored", tool_id)
                continue
            new_specs[tool_id] = _pin_spec(body, tool_id, current.event, library)
        current = replace(current, specs=new_specs)
    return current


def _assignments_json(assignments: list[EventAssignment]) -> str:
    return json.dumps(
        [
            {
                "event_index": a.event_index,
                "event": event_to_json_dict(a.event),
                "candidates": a.candidates,
                "specs": {
                    tool_id: {"prompt": s.prompt, "duration_s": s.duration_s, "extra": s.extra}
                    for tool_id, s in a.specs.items()
                },
            }
            for a in assignments
        ],
        indent=2,
    )


def _parse_collab_reply(text: str) -> dict:
    value = extract_first_json(text)
    if not isinstance(value, dict):
        raise SchemaViolation("reply must be a JSON object")
    if value.get("no_changes") is True:
        return {"no_changes": True}
    amendments = value.get("amendments")
    if not isinstance(amendments, list) or not amendments:
        raise SchemaViolation("reply needs no_changes: true or a non-empty amendments list",
                              field="amendments")
    for item in amendments:
        if not isinstance(item, dict) or "event_index" not in item or "tool_id" not in item:
            raise SchemaViolation("each amendment needs event_index and tool_id", field="amendments")
    return {"amendments": amendments}


def _apply_amendment(
    assignment: EventAssignment,
    amendment: dict,
    expert_type: AudioType,
    library: ToolLibrary,
) -> EventAssignment:
    tool_id = amendment["tool_id"]
    if tool_id not in assignment.specs:
        log.warning("collab amendment for unknown tool %r on event %d; ignored",
                    tool_id, assignment.event_index)
        return assignment
    old = assignment.specs[tool_id]
    own_event = assignment.event.audio_type == expert_type
    prompt = old.prompt
    new_prompt = amendment.get("prompt")
    if isinstance(new_prompt, str) and new_prompt.strip():
        if own_event or old.prompt in new_prompt:
            # foreign experts may only extend prompt text, never rewrite it
            prompt = new_prompt.strip()
        else:
            log.warning("collab prompt rewrite by foreign expert ignored (event %d)",
                        assignment.event_index)
    extra = dict(old.extra)
    new_extra = amendment.get("extra")
    if isinstance(new_extra, dict):
        for key, value in new_extra.items():
            if own_event or key in CROSS_CUTTING_EXTRA_KEYS:
                extra[str(key)] = str(value)
    spec = _pin_spec({"prompt": prompt, "extra": extra}, tool_id, assignment.event, library)
    new_specs = dict(assignment.specs)
    new_specs[tool_id] = spec
    return replace(assignment, specs=new_specs)


def collaborative_refine(
    backend: AgentBackend,
    assignments: list[EventAssignment],
    library: ToolLibrary,
    expert_order: tuple[AudioType, ...] = EXPERT_ORDER,
    max_repairs: int = 2,
) -> list[EventAssignment]:
    """One pass: each present expert, in the predefined order, sees the whole
    assignment set and amends what its expertise covers."""
    present = [t for t in expert_order if any(a.event.audio_type == t for a in assignments)]
    present_types = {a.event.audio_type for a in assignments}
    if set(present) != present_types:
        raise ValueError("expert_order must cover every present audio type exactly once")
    current = list(assignments)
    for expert_type in present:
        role = make_role("expert", "collab_refine", audio_type=expert_type)
        messages = render_prompt(
            role,
            {
                "audio_type": expert_type.value,
                "assignments_json": _assignments_json(current),
            },
        )
        reply = ask_structured(backend, role, messages, _parse_collab_reply, "collab_reply", max_repairs)
        if reply.get("no_changes"):
            continue
        by_index = {a.event_index: i for i, a in enumerate(current)}
        for amendment in reply["amendments"]:
            idx = amendment["event_index"]
            if idx not in by_index:
                log.warning("collab amendment for unknown event %r; ignored", idx)
                continue
            pos = by_index[idx]
            current[pos] = _apply_amendment(current[pos], amendment, expert_type, library)
    return current


def _parse_assignment_verdict(text: str) -> AssignmentVerdict:
    value = extract_first_json(text)
    if not isinstance(value, dict):
        raise SchemaViolation("verdict must be a JSON object")
    decision = value.get("decision")
    if decision not in ("approve", "revise", "rewrite"):
        raise SchemaViolation(f"unknown decision {decision!r}", field="decision")
    suggestions = value.get("suggestions") or []
    if not isinstance(suggestions, list) or any(not isinstance(s, str) for s in suggestions):
        raise SchemaViolation("suggestions must be a list of strings", field="suggestions")
    if decision == "revise" and not suggestions:
        raise SchemaViolation("revise verdict needs at least one suggestion", field="suggestions")
    replacement = None
    if decision == "rewrite":
        raw = value.get("replacement_specs")
        if not isinstance(raw, dict) or not raw:
            raise SchemaViolation("rewrite verdict needs replacement_specs", field="replacement_specs")
        replacement = {}
        for key, tools in raw.items():
            try:
                idx = int(key)
            except (TypeError, ValueError):
                raise SchemaViolation(f"replacement key {key!r} is not an event index",
                                      field="replacement_specs") from None
            if not isinstance(tools, dict):
                raise SchemaViolation("replacement per event must map tool id to spec",
                                      field="replacement_specs")
            replacement[idx] = tools
    return AssignmentVerdict(decision=decision, suggestions=list(suggestions),
                             replacement_specs=replacement)


def supervise_assignments(
    backend: AgentBackend,
    assignments: list[EventAssignment],
    max_repairs: int = 2,
) -> AssignmentVerdict:
    role = make_role(ROLE_ASSIGNMENT_SUPERVISOR, "supervise_assignments")
    messages = render_prompt(role, {"assignments_json": _assignments_json(assignments)})
    return ask_structured(
        backend, role, messages, _parse_assignment_verdict, "assignment_verdict", max_repairs
    )


def apply_replacement_specs(
    assignments: list[EventAssignment],
    replacement: dict[int, dict[str, dict]],
    library: ToolLibrary,
) -> list[EventAssignment]:
    """Adopt supervisor-rewritten specs, dropping any part that would break
    assignment invariants (unknown event, tool outside the candidate list,
    empty prompt)."""
    by_index = {a.event_index: i for i, a in enumerate(assignments)}
    out = list(assignments)
    for idx, tools in replacement.items():
        if idx not in by_index:
            log.warning("rewrite for unknown event index %d; ignored", idx)
            continue
        pos = by_index[idx]
        assignment = out[pos]
        new_specs = dict(assignment.specs)
        for tool_id, body in tools.items():
            if tool_id not in assignment.specs:
                log.warning("rewrite for tool %r outside candidates of event %d; ignored",
                            tool_id, idx)
                continue
            try:
                new_specs[tool_id] = _pin_spec(body, tool_id, assignment.event, library)
            except SchemaViolation as exc:
                log.warning("rewrite spec for event %d tool %r invalid: %s; ignored",
                            idx, tool_id, exc)
        out[pos] = replace(assignment, specs=new_specs)
    return out


def check_assignment(assignment: EventAssignment, library: ToolLibrary) -> None:
    """Raise when an assignment breaks its invariants."""
    if not 1 <= len(assignment.candidates) <= MAX_CANDIDATES:
        raise SchemaViolation(
            f"event {assignment.event_index}: candidate count {len(assignment.candidates)}",
            field="candidates", index=assignment.event_index,
        )
    for tool_id in assignment.candidates:
        descriptor = library.get(tool_id)
        if descriptor is None or not descriptor.covers(assignment.event.audio_type):
            raise SchemaViolation(
                f"event {assignment.event_index}: tool {tool_id!r} does not cover "
                f"{assignment.event.audio_type.value}",
                field="candidates", index=assignment.event_index,
            )
        if tool_id not in assignment.specs:
            raise SchemaViolation(
                f"event {assignment.event_index}: candidate {tool_id!r} has no spec",
                field="specs", index=assignment.event_index,
            )
        spec = assignment.specs[tool_id]
        if abs(spec.duration_s - assignment.event.span_s) > 1e-9:
            raise SchemaViolation(
                f"event {assignment.event_index}: spec duration drifted from event span",
                field="duration_s", index=assignment.event_index,
            )


def run_stage2(
    backend: AgentBackend,
    plan: EventPlan,
    library: ToolLibrary,
    self_refine_iters: int = DEFAULT_SELF_REFINE_ITERS,
    max_repairs: int = 2,
    expert_order: tuple[AudioType, ...] = EXPERT_ORDER,
) -> Stage2Result:
    """Full stage 2: per-event assignment, refinement passes, supervision.

    Supervision runs at most twice: a revise verdict buys one extra
    collaborative pass and a final check whose outcome is accepted as-is.
    """
    assignments: list[EventAssignment] = []
    for index, event in enumerate(plan.events):
        candidates = select_candidates(backend, event, library, plan.scene_caption, max_repairs)
        specs = {
            tool_id: refine_spec(backend, event, tool_id, library, plan.scene_caption, max_repairs)
            for tool_id in candidates
        }
        assignment = EventAssignment(
            event=event, event_index=index, candidates=candidates, specs=specs
        )
        assignment = self_refine(backend, assignment, library, self_refine_iters, max_repairs)
        check_assignment(assignment, library)
        assignments.append(assignment)

    assignments = collaborative_refine(backend, assignments, library, expert_order, max_repairs)
    collab_passes = 1
    verdicts: list[str] = []
    for round_index in range(2):
        verdict = supervise_assignments(backend, assignments, max_repairs)
        verdicts.append(verdict.decision)
        if verdict.decision == "approve":
            break
        if verdict.decision == "rewrite":
            assignments = apply_replacement_specs(assignments, verdict.replacement_specs, library)
            break
        if round_index == 0:
            assignments = collaborative_refine(backend, assignments, library, expert_order, max_repairs)
            collab_passes += 1
        # second revise is accepted as-is: supervision is capped at two rounds
    for assignment in assignments:
        check_assignment(assignment, library)
    return Stage2Result(assignments=assignments, verdicts=verdicts, collab_passes=collab_passes)
