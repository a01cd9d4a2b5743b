"""Structured event plans: the unit of work every pipeline stage consumes.

A plan is a list of typed, timed audio events plus a scene caption. Event
objects carry exactly six fields (audio_type, object, start_time, end_time,
description, volume) and that naming is part of the wire contract.
"""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field

from .errors import SchemaViolation
from .replytext import extract_first_json

EVENT_FIELDS = ("audio_type", "object", "start_time", "end_time", "description", "volume")

#: Shortest event span accepted by validation, in seconds.
MIN_EVENT_LENGTH_S = 0.1

#: Events may overrun a known total duration by this much before they are flagged.
DURATION_SLACK_S = 0.5


class AudioType(enum.Enum):
    SPEECH = "speech"
    SOUND_EFFECT = "sound_effect"
    MUSIC = "music"
    SONG = "song"

    @classmethod
    def parse(cls, value: str) -> "AudioType":
        for member in cls:
            if member.value == value:
                return member
        raise SchemaViolation(f"unknown audio_type: {value!r}", field="audio_type")


@dataclass(frozen=True)
class AudioEvent:
    audio_type: AudioType
    object: str
    start_time: float
    end_time: float
    description: str
    volume: float = 1.0

    @property
    def span_s(self) -> float:
        return self.end_time - self.start_time


@dataclass
class EventPlan:
    events: list[AudioEvent]
    scene_caption: str = ""
    total_duration: float | None = None


@dataclass
class InputDescriptor:
    """What the caller hands the pipeline: text, media references, or both."""

    text: str | None = None
    image_refs: list[str] = field(default_factory=list)
    video_ref: str | None = None
    precomputed_caption: str | None = None
    duration_s: float | None = None

    def has_visuals(self) -> bool:
        return bool(self.image_refs) or self.video_ref is not None

    def is_valid(self) -> bool:
        return bool(self.text) or self.has_visuals()


@dataclass(frozen=True)
class Violation:
    code: str
    index: int | None
    field: str
    detail: str

    def __str__(self) -> str:
        where = "plan" if self.index is None else str(self.index)
        return f"{self.code}@{where}: {self.detail}"


def _require_number(value, name: str, index: int) -> float:
    # bool is an int subclass; it is never a valid number here
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise SchemaViolation(
            f"event {index}: field {name!r} must be a number, got {type(value).__name__}",
            field=name,
            index=index,
        )
    return float(value)


def _event_from_json(obj, index: int) -> AudioEvent:
    if not isinstance(obj, dict):
        raise SchemaViolation(f"event {index} is not a JSON object", index=index)
    missing = [k for k in EVENT_FIELDS if k not in obj]
    if missing:
        raise SchemaViolation(
            f"event {index}: missing field {missing[0]!r}", field=missing[0], index=index
        )
    unknown = [k for k in obj if k not in EVENT_FIELDS]
    if unknown:
        raise SchemaViolation(
            f"event {index}: unknown field {unknown[0]!r}", field=unknown[0], index=index
        )
    if not isinstance(obj["audio_type"], str):
        raise SchemaViolation(f"event {index}: audio_type must be a string", field="audio_type", index=index)
    try:
        audio_type = AudioType.parse(obj["audio_type"])
    except SchemaViolation as exc:
        raise SchemaViolation(str(exc), field="audio_type", index=index) from None
    if not isinstance(obj["object"], str):
        raise SchemaViolation(f"event {index}: object must be a string", field="object", index=index)
    if not isinstance(obj["description"], str):
        raise SchemaViolation(f"event {index}: description must be a string", field="description", index=index)
    start = _require_number(obj["start_time"], "start_time", index)
    end = _require_number(obj["end_time"], "end_time", index)
    volume = _require_number(obj["volume"], "volume", index)
    if start < 0:
        raise SchemaViolation(f"event {index}: start_time must be non-negative", field="start_time", index=index)
    if end <= start:
        raise SchemaViolation(
            f"event {index}: end_time {end} must be greater than start_time {start}",
            field="end_time",
            index=index,
        )
    return AudioEvent(
        audio_type=audio_type,
        object=obj["object"],
        start_time=start,
        end_time=end,
        description=obj["description"],
        volume=volume,
    )


def plan_from_json_value(value) -> EventPlan:
    """Map a decoded JSON value (event array, or plan object) to a plan."""
    scene_caption = ""
    total_duration = None
    if isinstance(value, dict) and "events" not in value and "audio_type" in value:
        # a bare event object counts as a one-event plan
        value = [value]
    if isinstance(value, dict):
        if "events" not in value or not isinstance(value["events"], list):
            raise SchemaViolation("plan object must carry an 'events' array", field="events")
        raw_events = value["events"]
        caption = value.get("scene_caption", "")
        if caption is not None and not isinstance(caption, str):
            raise SchemaViolation("scene_caption must be a string", field="scene_caption")
        scene_caption = caption or ""
        duration = value.get("total_duration")
        if duration is not None:
            if isinstance(duration, bool) or not isinstance(duration, (int, float)):
                raise SchemaViolation("total_duration must be a number or null", field="total_duration")
            total_duration = float(duration)
    elif isinstance(value, list):
        raw_events = value
    else:
        raise SchemaViolation("plan JSON must be an array of events or a plan object")
    if not raw_events:
        raise SchemaViolation("plan has no events", field="events")
    events = [_event_from_json(item, i) for i, item in enumerate(raw_events)]
    return EventPlan(events=events, scene_caption=scene_caption, total_duration=total_duration)


def parse_plan(reply_text: str) -> EventPlan:
    """Parse the first JSON block of an agent reply into a plan.

    Raises NoJsonFound when no JSON exists at all, SchemaViolation when the
    JSON does not match the six-field event contract.
    """
    return plan_from_json_value(extract_first_json(reply_text))


def validate_plan(plan: EventPlan, duration: float | None = None) -> list[Violation]:
    """Check every plan and event invariant; violations are data, not errors.

    ``duration`` takes precedence over ``plan.total_duration`` as the timing
    ceiling when both are known.
    """
    violations: list[Violation] = []
    if not plan.events:
        violations.append(Violation("EmptyPlan", None, "events", "plan has no events"))
    limit = duration if duration is not None else plan.total_duration
    for i, ev in enumerate(plan.events):
        if ev.start_time < 0:
            violations.append(
                Violation("NegativeStart", i, "start_time", f"start_time {ev.start_time} < 0")
            )
        if ev.end_time <= ev.start_time:
            violations.append(
                Violation(
                    "NonPositiveLength", i, "end_time",
                    f"end_time {ev.end_time} not after start_time {ev.start_time}",
                )
            )
        elif ev.span_s < MIN_EVENT_LENGTH_S:
            violations.append(
                Violation(
                    "EventTooShort", i, "end_time",
                    f"event spans {ev.span_s:.3f}s, minimum is {MIN_EVENT_LENGTH_S}s",
                )
            )
        if not (0.0 < ev.volume <= 2.0):
            violations.append(
                Violation("VolumeOutOfRange", i, "volume", f"volume {ev.volume} outside (0.0, 2.0]")
            )
        if not ev.description:
            violations.append(
                Violation("EmptyDescription", i, "description", "description is empty")
            )
        if limit is not None and ev.end_time > limit + DURATION_SLACK_S:
            violations.append(
                Violation(
                    "ExceedsDuration", i, "end_time",
                    f"end_time {ev.end_time} past duration {limit} (+{DURATION_SLACK_S}s slack)",
                )
            )
    return violations


def serialize_plan(plan: EventPlan) -> str:
    """Render a plan as canonical JSON: paper field order, 3-decimal times."""
    lines = ["{"]
    lines.append(f'  "scene_caption": {json.dumps(plan.scene_caption)},')
    if plan.total_duration is None:
        lines.append('  "total_duration": null,')
    else:
        lines.append(f'  "total_duration": {plan.total_duration:.3f},')
    lines.append('  "events": [')
    last = len(plan.events) - 1
    for i, ev in enumerate(plan.events):
        body = ", ".join(
            [
                f'"audio_type": {json.dumps(ev.audio_type.value)}',
                f'"object": {json.dumps(ev.object)}',
                f'"start_time": {ev.start_time:.3f}',
                f'"end_time": {ev.end_time:.3f}',
                f'"description": {json.dumps(ev.description)}',
                f'"volume": {json.dumps(float(ev.volume))}',
            ]
        )
        lines.append("    {" + body + "}" + ("," if i != last else ""))
    lines.append("  ]")
    lines.append("}")
    return "\n".join(lines)


def event_to_json_dict(ev: AudioEvent) -> dict:
    """Event as a plain dict in canonical field order (for prompt contexts)."""
    return {
        "audio_type": ev.audio_type.value,
        "object": ev.object,
        "start_time": ev.start_time,
        "end_time": ev.end_time,
        "description": ev.description,
        "volume": ev.volume,
    }
