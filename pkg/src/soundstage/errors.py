"""Exception hierarchy shared across the engine."""
from __future__ import annotations


class EngineError(Exception):
    """Base class for every error the engine raises on purpose."""


class ParseError(EngineError):
    """A structured agent reply could not be turned into a value."""


class NoJsonFound(ParseError):
    """Reply text contains no syntactically valid JSON object or array."""


class SchemaViolation(ParseError):
    """JSON parsed, but a field is missing, mistyped, or out of contract.

    ``field`` names the offending key; ``index`` is the event index when the
    violation sits inside a plan's event list.
    """

    def __init__(self, message: str, field: str | None = None, index: int | None = None):
        super().__init__(message)
        self.field = field
        self.index = index


class StructuredParseFailed(EngineError):
    """Every parse attempt failed, repairs included."""

    def __init__(self, attempts: int, last_error: ParseError):
        super().__init__(f"structured reply unparseable after {attempts} attempts: {last_error}")
        self.attempts = attempts
        self.last_error = last_error


class BackendError(EngineError):
    """Agent backend failures."""


class BackendUnreachable(BackendError):
    def __init__(self, message: str, status: int | None = None):
        super().__init__(message)
        self.status = status


class ScriptExhausted(BackendUnreachable):
    """A scripted backend ran out of recorded replies for a role."""


class AttachmentUnsupported(BackendError):
    pass


class BackendTimeout(BackendError):
    pass


class MissingPlaceholder(EngineError):
    def __init__(self, name: str):
        super().__init__(f"prompt context missing placeholder: {name}")
        self.name = name


class NoToolForType(EngineError):
    def __init__(self, audio_type: str):
        super().__init__(f"tool library has no generator covering audio type: {audio_type}")
        self.audio_type = audio_type


class ToolError(EngineError):
    """A tool endpoint answered with an error payload."""

    def __init__(self, code: str, message: str):
        super().__init__(f"{code}: {message}")
        self.code = code


class ToolUnreachable(EngineError):
    pass


class DecodeError(EngineError):
    """Tool returned bytes that do not decode into valid audio."""


class UnsupportedRate(EngineError):
    pass


class ParamOutOfRange(EngineError):
    pass


class BudgetExhausted(EngineError):
    pass


class AllBranchesFailed(EngineError):
    """Every node in a generation tree failed at the gateway level."""


class TraceParseError(EngineError):
    pass


class ConfigError(EngineError):
    pass


class InputError(EngineError):
    pass


class ManifestError(EngineError):
    pass


class PipelineStageError(EngineError):
    """Any stage failure, tagged with the stage that raised it."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"{stage}: {cause}")
        self.stage = stage
        self.cause = cause
