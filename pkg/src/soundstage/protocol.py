"""Message contract between the engine and every agent role.

All roles (planner, supervisors, experts, evaluator) answer through one
backend interface, so real model servers and scripted replays are fully
interchangeable. Structured replies are parsed with bounded repair
re-prompting; the engine never edits a reply before parsing it.
"""
from __future__ import annotations

import json
import threading
from dataclasses import dataclass
from importlib import resources
from string import Template
from typing import Callable

import requests

from .errors import (
    AttachmentUnsupported,
    BackendTimeout,
    BackendUnreachable,
    MissingPlaceholder,
    ParseError,
    ScriptExhausted,
    StructuredParseFailed,
)
from .events import AudioType

ROLE_PLANNER = "planner"
ROLE_PLAN_SUPERVISOR = "plan_supervisor"
ROLE_ASSIGNMENT_SUPERVISOR = "assignment_supervisor"
ROLE_AUDIO_EVALUATOR = "audio_evaluator"

ATTACHMENT_KINDS = ("image", "video", "audio")

DEFAULT_MAX_REPAIRS = 2
DEFAULT_TIMEOUT_S = 120.0


def expert_role_name(audio_type: AudioType) -> str:
    return f"expert:{audio_type.value}"


@dataclass(frozen=True)
class Attachment:
    kind: str  # image | video | audio
    ref: str


@dataclass(frozen=True)
class AgentMessage:
    author: str  # system | user | assistant
    content: str
    attachments: tuple[Attachment, ...] = ()

    def to_json(self) -> dict:
        return {
            "author": self.author,
            "content": self.content,
            "attachments": [{"kind": a.kind, "ref": a.ref} for a in self.attachments],
        }


@dataclass(frozen=True)
class Role:
    """A persona plus the task template one operation renders against it."""

    name: str
    persona: str
    task_template: str
    audio_type: AudioType | None = None


def _load_prompt_data() -> dict:
    text = resources.files("soundstage").joinpath("data/prompts.json").read_text("utf-8")
    return json.loads(text)


_PROMPTS = _load_prompt_data()


def make_role(role_name: str, task: str, audio_type: AudioType | None = None) -> Role:
    """Build a Role from the shipped prompt data file.

    Expert personas are parameterized by audio type; every other role name
    maps to exactly one persona.
    """
    if role_name.startswith("expert"):
        if audio_type is None:
            raise ValueError("expert roles need an audio_type")
        persona = Template(_PROMPTS["personas"]["expert"]).substitute(
            audio_type=audio_type.value
        )
        name = expert_role_name(audio_type)
    else:
        persona = _PROMPTS["personas"][role_name]
        name = role_name
    return Role(
        name=name,
        persona=persona,
        task_template=_PROMPTS["tasks"][task],
        audio_type=audio_type,
    )


def render_prompt(
    role: Role,
    context: dict[str, str],
    attachments: tuple[Attachment, ...] = (),
) -> list[AgentMessage]:
    """Expand a role's templates into the message list sent to the backend.

    Deterministic: persona first, task content second, attachments carried on
    the task message. Raises MissingPlaceholder when the template names a key
    the context does not provide.
    """
    try:
        task_text = Template(role.task_template).substitute(context)
    except KeyError as exc:
        raise MissingPlaceholder(exc.args[0]) from None
    return [
        AgentMessage(author="system", content=role.persona),
        AgentMessage(author="user", content=task_text, attachments=tuple(attachments)),
    ]


class AgentBackend:
    """Contract every backend satisfies: answer any role with reply text."""

    def complete(self, role_name: str, messages: list[AgentMessage]) -> str:
        raise NotImplementedError


class ScriptedBackend(AgentBackend):
    """Replays recorded replies keyed by (role name, per-role turn counter).

    The script is a JSON object mapping role names to reply lists. Turn
    counters advance atomically so concurrent pipelines cannot lose or
    duplicate a turn; running past a role's script raises ScriptExhausted.
    """

    def __init__(self, script: dict[str, list[str]]):
        self._script = {role: list(replies) for role, replies in script.items()}
        self._turns: dict[str, int] = {}
        self._lock = threading.Lock()
        self.call_log: list[tuple[str, int]] = []

    @classmethod
    def from_file(cls, path) -> "ScriptedBackend":
        with open(path, "r", encoding="utf-8") as fh:
            return cls(json.load(fh))

    def complete(self, role_name: str, messages: list[AgentMessage]) -> str:
        with self._lock:
            turn = self._turns.get(role_name, 0)
            self._turns[role_name] = turn + 1
            self.call_log.append((role_name, turn))
            replies = self._script.get(role_name, [])
            if turn >= len(replies):
                raise ScriptExhausted(
                    f"script has no reply for role {role_name!r} turn {turn}"
                )
            return replies[turn]

    def calls_for(self, role_name: str) -> int:
        with self._lock:
            return self._turns.get(role_name, 0)

    @property
    def total_calls(self) -> int:
        with self._lock:
            return len(self.call_log)


class HttpBackend(AgentBackend):
    """Talks to a model server over the agent wire protocol (POST /v1/chat)."""

    def __init__(self, base_url: str, timeout_s: float = DEFAULT_TIMEOUT_S):
        self.base_url = base_url.rstrip("/")
        self.timeout_s = timeout_s

    def complete(self, role_name: str, messages: list[AgentMessage]) -> str:
        body = {"role": role_name, "messages": [m.to_json() for m in messages]}
        try:
            resp = requests.post(
                f"{self.base_url}/v1/chat", json=body, timeout=self.timeout_s
            )
        except requests.Timeout as exc:
            raise BackendTimeout(f"backend timed out after {self.timeout_s}s") from exc
        except requests.RequestException as exc:
            raise BackendUnreachable(f"{self.base_url}: {exc}") from exc
        if resp.status_code != 200:
            code = ""
            message = f"status {resp.status_code}"
            try:
                payload = resp.json()
                code = str(payload.get("code", ""))
                message = str(payload.get("message", message))
            except ValueError:
                pass
            if code == "attachment_unsupported":
                raise AttachmentUnsupported(message)
            raise BackendUnreachable(message, status=resp.status_code)
        try:
            return str(resp.json()["content"])
        except (ValueError, KeyError) as exc:
            raise BackendUnreachable(f"malformed backend reply: {exc}", status=200) from exc


class CountingBackend(AgentBackend):
    """Transparent wrapper tallying per-role call counts, thread-safe."""

    def __init__(self, inner: AgentBackend):
        self.inner = inner
        self._lock = threading.Lock()
        self.counts: dict[str, int] = {}

    def complete(self, role_name: str, messages: list[AgentMessage]) -> str:
        with self._lock:
            self.counts[role_name] = self.counts.get(role_name, 0) + 1
        return self.inner.complete(role_name, messages)

    @property
    def total(self) -> int:
        with self._lock:
            return sum(self.counts.values())

    def snapshot(self) -> dict[str, int]:
        with self._lock:
            return dict(self.counts)


def backend_from_descriptor(descriptor: str) -> AgentBackend:
    """Build a backend from a CLI-style descriptor: scripted:PATH or http:URL."""
    if descriptor.startswith("scripted:"):
        return ScriptedBackend.from_file(descriptor[len("scripted:"):])
    if descriptor.startswith("http:") or descriptor.startswith("https:"):
        return HttpBackend(descriptor)
    raise ValueError(f"unknown backend descriptor: {descriptor!r}")


def complete(backend: AgentBackend, role: Role, messages: list[AgentMessage]) -> str:
    """Send a rendered prompt; the reply comes back verbatim."""
    if not messages:
        raise ValueError("messages must be non-empty")
    if messages[0].content != role.persona:
        raise ValueError("first message must carry the role persona")
    return backend.complete(role.name, messages)


def ask_structured(
    backend: AgentBackend,
    role: Role,
    messages: list[AgentMessage],
    parser: Callable[[str], object],
    schema_id: str = "",
    max_repairs: int = DEFAULT_MAX_REPAIRS,
):
    """complete() plus parse, re-prompting with the parse error on failure.

    Makes between 1 and max_repairs + 1 backend calls, then raises
    StructuredParseFailed carrying the final parse error.
    """
    if max_repairs < 0:
        raise ValueError("max_repairs must be >= 0")
    convo = list(messages)
    last_error: ParseError | None = None
    attempts = 0
    for _ in range(max_repairs + 1):
        reply = complete(backend, role, convo)
        attempts += 1
        try:
            return parser(reply)
        except ParseError as exc:
            last_error = exc
            convo = convo + [
                AgentMessage(author="assistant", content=reply),
                AgentMessage(
                    author="user",
                    content=(
                        f"Your previous reply could not be used: {exc}. "
                        f"Answer again with only the corrected JSON"
                        + (f" for {schema_id}." if schema_id else ".")
                    ),
                ),
            ]
    raise StructuredParseFailed(attempts, last_error)
