"""soundstage: a multi-agent audio production engine.

Turns a multimodal scene description into one composed audio track in three
supervised stages: event planning, expert tool assignment, and per-event
search-based generation, followed by a deterministic timeline mix.
"""

from .events import (
    AudioEvent,
    AudioType,
    EventPlan,
    InputDescriptor,
    Violation,
    parse_plan,
    serialize_plan,
    validate_plan,
)
from .experts import EventAssignment, route, run_stage2
from .gateway import ArtifactStore, ToolGateway, ToolRequest, mock_synthesize
from .library import GenerationSpec, ToolDescriptor, ToolLibrary, default_library
from .mixer import PostProcessAction, Stem, mixdown, resample
from .pipeline import RunConfig, bench, inspect_tree, run
from .planning import PlanVerdict, plan_loop
from .protocol import (
    AgentBackend,
    AgentMessage,
    Attachment,
    HttpBackend,
    Role,
    ScriptedBackend,
    ask_structured,
    complete,
    render_prompt,
)
from .search import Budget, EvalReport, GenerationTree, best_result, classify, evaluate, run_event
from .wav_io import AudioArtifact, decode_wav, encode_wav

__version__ = "0.1.0"

__all__ = [
    "AgentBackend",
    "AgentMessage",
    "ArtifactStore",
    "Attachment",
    "AudioArtifact",
    "AudioEvent",
    "AudioType",
    "Budget",
    "EvalReport",
    "EventAssignment",
    "EventPlan",
    "GenerationSpec",
    "GenerationTree",
    "HttpBackend",
    "InputDescriptor",
    "PlanVerdict",
    "PostProcessAction",
    "Role",
    "RunConfig",
    "ScriptedBackend",
    "Stem",
    "ToolDescriptor",
    "ToolGateway",
    "ToolLibrary",
    "ToolRequest",
    "Violation",
    "ask_structured",
    "bench",
    "best_result",
    "classify",
    "complete",
    "decode_wav",
    "default_library",
    "encode_wav",
    "evaluate",
    "inspect_tree",
    "mixdown",
    "mock_synthesize",
    "parse_plan",
    "plan_loop",
    "render_prompt",
    "resample",
    "route",
    "run",
    "run_event",
    "run_stage2",
    "serialize_plan",
    "validate_plan",
]
