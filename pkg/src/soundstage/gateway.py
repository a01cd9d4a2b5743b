"""Client side of the tool wire protocol, plus the deterministic synthesizer.

Endpoints are either the literal string ``"mock"`` (in-process synthesis, no
network) or an ``http://`` base URL speaking the protocol documented in
PROTOCOL.md.
"""
from __future__ import annotations

import hashlib
import json
import logging
import threading
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import requests

from . import mixer
from .errors import DecodeError, ParamOutOfRange, SchemaViolation, ToolError, ToolUnreachable
from .library import GenerationSpec, ToolDescriptor, ToolLibrary, descriptor_from_json
from .mixer import PostProcessAction
from .wav_io import AudioArtifact, decode_wav, encode_wav

log = logging.getLogger(__name__)

MOCK_ENDPOINT = "mock"
MOCK_SAMPLE_RATE = 48000
MOCK_AMPLITUDE = 0.3

#: generated artifacts may deviate from the requested length by this fraction
DURATION_TOLERANCE = 0.10

MAX_REQUEST_DURATION_S = 600.0

DEFAULT_TOOL_TIMEOUT_S = 60.0


def fnv1a32(data: bytes) -> int:
    """32-bit FNV-1a; pinned in PROTOCOL.md for cross-implementation parity."""
    h = 0x811C9DC5
    for byte in data:
        h ^= byte
        h = (h * 0x01000193) & 0xFFFFFFFF
    return h


def mock_synthesize(spec: GenerationSpec, sample_rate: int = MOCK_SAMPLE_RATE, seed: int = 0) -> AudioArtifact:
    """Deterministic stand-in for a real generation model.

    Emits a pure sine at 200 + (fnv1a32(prompt) mod 1600) Hz, amplitude 0.3,
    for exactly the requested duration. Bit-reproducible across runs and
    implementations: phase starts at frame 0, samples are float64. A nonzero
    seed salts the hash (``prompt#seed``) so benches can vary tones; seed 0
    is the identity and the cross-implementation reference.
    """
    key = spec.prompt if seed == 0 else f"{spec.prompt}#{seed}"
    freq = 200 + (fnv1a32(key.encode("utf-8")) % 1600)
    frames = round(spec.duration_s * sample_rate)
    n = np.arange(frames, dtype=np.float64)
    samples = MOCK_AMPLITUDE * np.sin(2.0 * np.pi * freq * n / sample_rate)
    return AudioArtifact(samples=samples, sample_rate=sample_rate, channels=1)


def mock_process(artifact: AudioArtifact, action: PostProcessAction) -> AudioArtifact:
    """Mock-side post-processing: local actions run for real, external ones
    are deterministic no-ops (identity), which keeps traces reproducible."""
    if action.kind == "external":
        return artifact
    return mixer.apply_local_action(artifact, action)


@dataclass(frozen=True)
class ToolRequest:
    """One call to a tool endpoint: generation or post-processing."""

    tool_id: str
    spec: GenerationSpec | None = None
    action: PostProcessAction | None = None
    input_artifact: AudioArtifact | None = None

    def check(self) -> None:
        if (self.spec is None) == (self.action is None):
            raise SchemaViolation("request needs exactly one of spec or action")
        if self.spec is not None and not (0.0 < self.spec.duration_s <= MAX_REQUEST_DURATION_S):
            raise ParamOutOfRange(
                f"duration_s {self.spec.duration_s} outside (0, {MAX_REQUEST_DURATION_S}]"
            )
        if self.action is not None and self.input_artifact is None:
            raise SchemaViolation("post-process request needs an input artifact")

    def cache_key(self) -> str:
        if self.spec is not None:
            payload = {
                "kind": "generate",
                "tool_id": self.tool_id,
                "prompt": self.spec.prompt,
                "duration_s": self.spec.duration_s,
                "extra": dict(sorted(self.spec.extra.items())),
            }
        else:
            digest = hashlib.sha256(self.input_artifact.samples.tobytes()).hexdigest()[:16]
            payload = {
                "kind": "process",
                "tool_id": self.tool_id,
                "action": self.action.kind,
                "external_action": self.action.action,
                "params": dict(sorted(self.action.params.items())),
                "input": digest,
            }
        blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


class ArtifactStore:
    """Content-addressed WAV files under one directory; re-runs are idempotent."""

    def __init__(self, root):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def path_for(self, request: ToolRequest) -> Path:
        return self.root / f"{request.cache_key()}.wav"

    def save(self, request: ToolRequest, artifact: AudioArtifact) -> Path:
        path = self.path_for(request)
        if not path.exists():
            path.write_bytes(encode_wav(artifact))
        return path


def _raise_tool_error(response) -> None:
    try:
        payload = response.json()
        raise ToolError(str(payload.get("code", "unknown")), str(payload.get("message", "")))
    except ValueError:
        raise ToolError("http_error", f"status {response.status_code}") from None


def invoke_endpoint(
    endpoint: str,
    request: ToolRequest,
    sample_rate: int = MOCK_SAMPLE_RATE,
    seed: int = 0,
    timeout_s: float = DEFAULT_TOOL_TIMEOUT_S,
) -> AudioArtifact:
    """Execute one tool request against a mock or HTTP endpoint."""
    request.check()
    if endpoint == MOCK_ENDPOINT:
        if request.spec is not None:
            raw = mock_synthesize(request.spec, sample_rate=sample_rate, seed=seed)
        else:
            raw = mock_process(request.input_artifact, request.action)
        # round-trip through PCM16 so in-process results are byte-equal to
        # the same tool served over the wire (golden files stay transport-
        # independent)
        return decode_wav(encode_wav(raw))
    if request.spec is not None:
        body = {
            "tool_id": request.tool_id,
            "prompt": request.spec.prompt,
            "duration_s": request.spec.duration_s,
            "extra": request.spec.extra,
        }
        try:
            resp = requests.post(f"{endpoint}/v1/generate", json=body, timeout=timeout_s)
        except requests.RequestException as exc:
            raise ToolUnreachable(f"{endpoint}: {exc}") from exc
    else:
        meta = {
            "tool_id": request.tool_id,
            "action": request.action.action or request.action.kind,
            "params": request.action.params,
        }
        try:
            resp = requests.post(
                f"{endpoint}/v1/process",
                data={"request": json.dumps(meta)},
                files={"audio": ("input.wav", encode_wav(request.input_artifact), "audio/wav")},
                timeout=timeout_s,
            )
        except requests.RequestException as exc:
            raise ToolUnreachable(f"{endpoint}: {exc}") from exc
    if resp.status_code != 200:
        _raise_tool_error(resp)
    artifact = decode_wav(resp.content)
    artifact.check()
    return artifact


def describe_endpoint(endpoint: str, timeout_s: float = DEFAULT_TOOL_TIMEOUT_S,
                      library: ToolLibrary | None = None, tool_id: str | None = None) -> ToolDescriptor:
    """Fetch a tool's self-description; for mock endpoints, answer locally."""
    if endpoint == MOCK_ENDPOINT:
        if library is not None and tool_id is not None and library.get(tool_id) is not None:
            return library.get(tool_id)
        return ToolDescriptor(
            id=tool_id or "mock",
            task="Deterministic Test Synthesis",
            input_modalities=frozenset({"text"}),
            audio_types=frozenset(),
            characteristics="sine-tone synthesizer",
            kind="generator",
        )
    try:
        resp = requests.get(f"{endpoint}/v1/describe", timeout=timeout_s)
    except requests.RequestException as exc:
        raise ToolUnreachable(f"{endpoint}: {exc}") from exc
    if resp.status_code != 200:
        _raise_tool_error(resp)
    try:
        return descriptor_from_json(resp.json())
    except ValueError as exc:
        raise DecodeError(f"describe payload is not valid JSON: {exc}") from exc


def descriptor_mismatches(remote: ToolDescriptor, library: ToolLibrary) -> list[str]:
    """Warnings (never errors) when a remote descriptor disagrees with ours."""
    local = library.get(remote.id)
    if local is None:
        return [f"tool {remote.id!r} not present in local library"]
    warnings = []
    if local.kind != remote.kind:
        warnings.append(f"tool {remote.id!r}: kind {remote.kind!r} differs from library {local.kind!r}")
    if local.audio_types and remote.audio_types and not (local.audio_types & remote.audio_types):
        warnings.append(f"tool {remote.id!r}: remote audio types disjoint from library entry")
    return warnings


class ToolGateway:
    """Resolves tool ids to endpoints and runs requests with a concurrency cap."""

    def __init__(
        self,
        endpoints: dict[str, str],
        store: ArtifactStore | None = None,
        sample_rate: int = MOCK_SAMPLE_RATE,
        seed: int = 0,
        max_in_flight: int = 4,
        timeout_s: float = DEFAULT_TOOL_TIMEOUT_S,
    ):
        self.endpoints = dict(endpoints)
        self.store = store
        self.sample_rate = sample_rate
        self.seed = seed
        self.timeout_s = timeout_s
        self._gate = threading.Semaphore(max_in_flight)
        self._lock = threading.Lock()
        self.warnings: list[dict] = []

    def endpoint_for(self, tool_id: str) -> str:
        endpoint = self.endpoints.get(tool_id, self.endpoints.get("*"))
        if endpoint is None:
            raise ToolUnreachable(f"no endpoint registered for tool {tool_id!r}")
        return endpoint

    def invoke(self, request: ToolRequest) -> AudioArtifact:
        endpoint = self.endpoint_for(request.tool_id)
        with self._gate:
            artifact = invoke_endpoint(
                endpoint, request,
                sample_rate=self.sample_rate, seed=self.seed, timeout_s=self.timeout_s,
            )
        if request.spec is not None:
            wanted = request.spec.duration_s
            if abs(artifact.duration_s - wanted) > DURATION_TOLERANCE * wanted:
                note = {
                    "tool_id": request.tool_id,
                    "requested_s": wanted,
                    "actual_s": artifact.duration_s,
                }
                with self._lock:
                    self.warnings.append(note)
                log.warning(
                    "tool %s returned %.3fs for a %.3fs request",
                    request.tool_id, artifact.duration_s, wanted,
                )
        if self.store is not None:
            self.store.save(request, artifact)
        return artifact

    def describe(self, tool_id: str, library: ToolLibrary | None = None) -> ToolDescriptor:
        endpoint = self.endpoint_for(tool_id)
        return describe_endpoint(endpoint, timeout_s=self.timeout_s, library=library, tool_id=tool_id)
