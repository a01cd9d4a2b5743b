"""Deterministic HTTP tool server for tests and protocol conformance runs.

Serves the full tool wire protocol on loopback, backed by the same sine
synthesizer the in-process mock uses, so golden WAVs match byte-for-byte.
"""
from __future__ import annotations

import json
import threading
from email.parser import BytesParser
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from .gateway import MOCK_SAMPLE_RATE, mock_process, mock_synthesize
from .library import GenerationSpec, ToolDescriptor, descriptor_to_json
from .mixer import PostProcessAction
from .wav_io import decode_wav, encode_wav

LOCAL_ACTIONS = ("trim_leading_silence", "apply_gain", "fade")


def parse_multipart(content_type: str, body: bytes) -> dict[str, bytes]:
    """Split a multipart/form-data body into {part name: raw bytes}."""
    header = f"Content-Type: {content_type}\r\n\r\n".encode("ascii")
    message = BytesParser().parsebytes(header + body)
    parts: dict[str, bytes] = {}
    if not message.is_multipart():
        return parts
    for part in message.get_payload():
        name = part.get_param("name", header="content-disposition")
        if name:
            parts[name] = part.get_payload(decode=True) or b""
    return parts


class MockToolServer:
    """Loopback tool service with configurable failure/duration behavior."""

    def __init__(
        self,
        tool_id: str = "MockTool",
        kind: str = "generator",
        sample_rate: int = MOCK_SAMPLE_RATE,
        seed: int = 0,
        duration_factor: float = 1.0,
        fail_code: str | None = None,
    ):
        self.tool_id = tool_id
        self.kind = kind
        self.sample_rate = sample_rate
        self.seed = seed
        self.duration_factor = duration_factor
        self.fail_code = fail_code
        self._server: ThreadingHTTPServer | None = None
        self._thread: threading.Thread | None = None

    @property
    def descriptor(self) -> ToolDescriptor:
        return ToolDescriptor(
            id=self.tool_id,
            task="Deterministic Test Synthesis",
            input_modalities=frozenset({"text"}),
            audio_types=frozenset(),
            characteristics="loopback sine-tone service",
            kind=self.kind,
        )

    def start(self) -> str:
        outer = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, *args):  # keep pytest output clean
                pass

            def _send_json(self, status: int, payload: dict):
                blob = json.dumps(payload).encode("utf-8")
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(blob)))
                self.end_headers()
                self.wfile.write(blob)

            def _send_wav(self, data: bytes):
                self.send_response(200)
                self.send_header("Content-Type", "audio/wav")
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

            def do_GET(self):
                if self.path == "/v1/describe":
                    self._send_json(200, descriptor_to_json(outer.descriptor))
                else:
                    self._send_json(404, {"code": "not_found", "message": self.path})

            def do_POST(self):
                length = int(self.headers.get("Content-Length", "0"))
                body = self.rfile.read(length)
                if outer.fail_code is not None:
                    self._send_json(502, {"code": outer.fail_code, "message": "injected failure"})
                    return
                if self.path == "/v1/generate":
                    self._handle_generate(body)
                elif self.path == "/v1/process":
                    self._handle_process(body)
                else:
                    self._send_json(404, {"code": "not_found", "message": self.path})

            def _handle_generate(self, body: bytes):
                try:
                    payload = json.loads(body)
                    prompt = payload["prompt"]
                    duration = float(payload["duration_s"])
                except (ValueError, KeyError, TypeError):
                    self._send_json(400, {"code": "bad_request", "message": "invalid generate payload"})
                    return
                if not prompt or duration <= 0:
                    self._send_json(400, {"code": "bad_request", "message": "empty prompt or duration"})
                    return
                spec = GenerationSpec(
                    tool_id=outer.tool_id,
                    prompt=prompt,
                    duration_s=duration * outer.duration_factor,
                    extra=payload.get("extra", {}),
                )
                artifact = mock_synthesize(spec, sample_rate=outer.sample_rate, seed=outer.seed)
                self._send_wav(encode_wav(artifact))

            def _handle_process(self, body: bytes):
                content_type = self.headers.get("Content-Type", "")
                if "multipart" not in content_type:
                    self._send_json(400, {"code": "bad_request", "message": "expected multipart body"})
                    return
                parts = parse_multipart(content_type, body)
                if "audio" not in parts or "request" not in parts:
                    self._send_json(400, {"code": "bad_request", "message": "missing audio or request part"})
                    return
                try:
                    meta = json.loads(parts["request"])
                    action_name = meta["action"]
                    params = meta.get("params", {})
                    artifact = decode_wav(parts["audio"])
                except Exception as exc:
                    self._send_json(400, {"code": "bad_request", "message": str(exc)})
                    return
                if action_name in LOCAL_ACTIONS:
                    action = PostProcessAction(kind=action_name, params=params)
                else:
                    # external-style actions (super_resolution, extract) are
                    # deterministic identities on the mock
                    action = PostProcessAction(
                        kind="external", tool_id=outer.tool_id, action=action_name, params=params
                    )
                try:
                    result = mock_process(artifact, action)
                except Exception as exc:
                    self._send_json(422, {"code": "process_failed", "message": str(exc)})
                    return
                self._send_wav(encode_wav(result))

        self._server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()
        return self.url

    @property
    def url(self) -> str:
        assert self._server is not None, "server not started"
        host, port = self._server.server_address[:2]
        return f"http://{host}:{port}"

    def stop(self) -> None:
        if self._server is not None:
            self._server.shutdown()
            self._server.server_close()
            self._server = None

    def __enter__(self) -> str:
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()
