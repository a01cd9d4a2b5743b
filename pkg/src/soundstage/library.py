"""Registry of external generation and post-processing tools."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources

from .errors import SchemaViolation
from .events import AudioType

MODALITIES = ("text", "video", "image", "lyrics", "audio")


@dataclass(frozen=True)
class ToolDescriptor:
    id: str
    task: str
    input_modalities: frozenset[str]
    audio_types: frozenset[AudioType]
    characteristics: str
    kind: str  # generator | post_processor

    def covers(self, audio_type: AudioType) -> bool:
        return self.kind == "generator" and audio_type in self.audio_types


@dataclass(frozen=True)
class GenerationSpec:
    """Everything a generation tool needs for one event."""

    tool_id: str
    prompt: str
    duration_s: float
    extra: dict = field(default_factory=dict)


class ToolLibrary:
    """Insertion-ordered, immutable-after-load map of tool descriptors."""

    def __init__(self, descriptors: list[ToolDescriptor]):
        self._by_id: dict[str, ToolDescriptor] = {}
        for desc in descriptors:
            if desc.id in self._by_id:
                raise SchemaViolation(f"duplicate tool id in library: {desc.id}", field="id")
            if desc.kind == "generator" and not desc.audio_types:
                raise SchemaViolation(
                    f"generator {desc.id} names no audio types", field="audio_types"
                )
            self._by_id[desc.id] = desc

    def __contains__(self, tool_id: str) -> bool:
        return tool_id in self._by_id

    def __iter__(self):
        return iter(self._by_id.values())

    def __len__(self) -> int:
        return len(self._by_id)

    def get(self, tool_id: str) -> ToolDescriptor | None:
        return self._by_id.get(tool_id)

    def generators_for(self, audio_type: AudioType) -> list[ToolDescriptor]:
        """Covering generators in library file order."""
        return [d for d in self._by_id.values() if d.covers(audio_type)]

    def post_processors(self) -> list[ToolDescriptor]:
        return [d for d in self._by_id.values() if d.kind == "post_processor"]


def descriptor_from_json(obj: dict) -> ToolDescriptor:
    for key in ("id", "task", "input_modalities", "audio_types", "kind"):
        if key not in obj:
            raise SchemaViolation(f"tool descriptor missing field {key!r}", field=key)
    if obj["kind"] not in ("generator", "post_processor"):
        raise SchemaViolation(f"unknown tool kind: {obj['kind']}", field="kind")
    modalities = frozenset(obj["input_modalities"])
    bad = modalities - set(MODALITIES)
    if bad:
        raise SchemaViolation(f"unknown input modality: {sorted(bad)[0]}", field="input_modalities")
    return ToolDescriptor(
        id=obj["id"],
        task=obj["task"],
        input_modalities=modalities,
        audio_types=frozenset(AudioType.parse(t) for t in obj["audio_types"]),
        characteristics=obj.get("characteristics", ""),
        kind=obj["kind"],
    )


def descriptor_to_json(desc: ToolDescriptor) -> dict:
    return {
        "id": desc.id,
        "task": desc.task,
        "input_modalities": sorted(desc.input_modalities),
        "audio_types": sorted(t.value for t in desc.audio_types),
        "characteristics": desc.characteristics,
        "kind": desc.kind,
    }


def load_library(path) -> ToolLibrary:
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    if not isinstance(raw, list):
        raise SchemaViolation("tool library file must be a JSON list")
    return ToolLibrary([descriptor_from_json(item) for item in raw])


def default_library() -> ToolLibrary:
    """The shipped registry of production tools."""
    text = resources.files("soundstage").joinpath("data/tools.json").read_text("utf-8")
    return ToolLibrary([descriptor_from_json(item) for item in json.loads(text)])
