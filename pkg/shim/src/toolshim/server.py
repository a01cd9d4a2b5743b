"""HTTP service speaking the tool wire protocol.

Two modes: ``synth`` answers with the deterministic reference synthesizer
(protocol conformance and golden-file testing), ``subprocess`` shells out to
an operator-supplied model command so real generators can sit behind the
same endpoints unchanged.
"""
from __future__ import annotations

import argparse
import json
import shlex
import subprocess
import sys
import tempfile
import threading
import wave
from dataclasses import dataclass, field
from email.parser import BytesParser
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

from . import synth

SYNTH_ACTIONS = ("trim_leading_silence", "apply_gain")

DEFAULT_SAMPLE_RATE = 48000
SUBPROCESS_TIMEOUT_S = 300.0


@dataclass
class ShimConfig:
    tool_id: str = "ShimTool"
    mode: str = "synth"  # synth | subprocess
    command: str | None = None
    sample_rate: int = DEFAULT_SAMPLE_RATE
    port: int = 0
    host: str = "127.0.0.1"
    descriptor: dict = field(default_factory=dict)

    def check(self) -> None:
        if self.mode not in ("synth", "subprocess"):
            raise ValueError(f"unknown mode: {self.mode}")
        if self.mode == "subprocess":
            if not self.command:
                raise ValueError("subprocess mode needs a command template")
            for placeholder in ("{prompt}", "{out}"):
                if placeholder not in self.command:
                    raise ValueError(f"command template must contain {placeholder}")

    @classmethod
    def from_file(cls, path) -> "ShimConfig":
        raw = json.loads(Path(path).read_text("utf-8"))
        config = cls(**raw)
        config.check()
        return config

    def describe_json(self) -> dict:
        base = {
            "id": self.tool_id,
            "task": "Deterministic Test Synthesis" if self.mode == "synth" else "Wrapped Model Command",
            "input_modalities": ["text"],
            "audio_types": [],
            "characteristics": f"tool shim in {self.mode} mode",
            "kind": "generator",
        }
        base.update(self.descriptor)
        return base


def _parse_multipart(content_type: str, body: bytes) -> dict[str, bytes]:
    header = f"Content-Type: {content_type}\r\n\r\n".encode("ascii")
    message = BytesParser().parsebytes(header + body)
    parts: dict[str, bytes] = {}
    if message.is_multipart():
        for part in message.get_payload():
            name = part.get_param("name", header="content-disposition")
            if name:
                parts[name] = part.get_payload(decode=True) or b""
    return parts


def _run_command(config: ShimConfig, prompt: str, duration_s: float, extra: dict) -> bytes:
    with tempfile.TemporaryDirectory(prefix="toolshim_") as tmp:
        out_path = Path(tmp) / "output.wav"
        values = {
            "prompt": prompt,
            "out": str(out_path),
            "duration_s": duration_s,
            "sample_rate": config.sample_rate,
            **{f"extra_{k}": v for k, v in extra.items()},
        }
        argv = []
        for token in shlex.split(config.command):
            try:
                argv.append(token.format(**values))
            except (KeyError, IndexError) as exc:
                raise RuntimeError(f"bad command placeholder: {exc}") from exc
        result = subprocess.run(
            argv, capture_output=True, timeout=SUBPROCESS_TIMEOUT_S
        )
        if result.returncode != 0:
            stderr = result.stderr.decode("utf-8", "replace")[-500:]
            raise RuntimeError(f"command exited {result.returncode}: {stderr}")
        if not out_path.exists():
            raise RuntimeError("command wrote no output file")
        data = out_path.read_bytes()
        with wave.open(str(out_path), "rb"):
            pass  # reject non-WAV output before serving it
        return data


class ShimServer:
    def __init__(self, config: ShimConfig):
        config.check()
        self.config = config
        self._server: ThreadingHTTPServer | None = None
        self._thread: threading.Thread | None = None

    def start(self) -> str:
        config = self.config

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, *args):
                pass

            def _json(self, status: int, payload: dict):
                blob = json.dumps(payload).encode("utf-8")
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(blob)))
                self.end_headers()
                self.wfile.write(blob)

            def _wav(self, data: bytes):
                self.send_response(200)
                self.send_header("Content-Type", "audio/wav")
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

            def do_GET(self):
                if self.path == "/v1/describe":
                    self._json(200, config.describe_json())
                else:
                    self._json(404, {"code": "not_found", "message": self.path})

            def do_POST(self):
                length = int(self.headers.get("Content-Length", "0"))
                body = self.rfile.read(length)
                if self.path == "/v1/generate":
                    self._generate(body)
                elif self.path == "/v1/process":
                    self._process(body)
                else:
                    self._json(404, {"code": "not_found", "message": self.path})

            def _generate(self, body: bytes):
                try:
                    payload = json.loads(body)
                    prompt = payload["prompt"]
                    duration = float(payload["duration_s"])
                    extra = payload.get("extra") or {}
                except (ValueError, KeyError, TypeError):
                    self._json(400, {"code": "bad_request", "message": "invalid generate payload"})
                    return
                if not isinstance(prompt, str) or not prompt or duration <= 0:
                    self._json(400, {"code": "bad_request", "message": "empty prompt or duration"})
                    return
                if config.mode == "synth":
                    samples = synth.synthesize(prompt, duration, config.sample_rate)
                    self._wav(synth.to_wav_bytes(samples, config.sample_rate))
                    return
                try:
                    self._wav(_run_command(config, prompt, duration, extra))
                except Exception as exc:
                    self._json(502, {"code": "tool_error", "message": str(exc)})

            def _process(self, body: bytes):
                content_type = self.headers.get("Content-Type", "")
                if "multipart" not in content_type:
                    self._json(400, {"code": "bad_request", "message": "expected multipart body"})
                    return
                parts = _parse_multipart(content_type, body)
                if "audio" not in parts or "request" not in parts:
                    self._json(400, {"code": "bad_request", "message": "missing audio or request part"})
                    return
                try:
                    meta = json.loads(parts["request"])
                    action = meta["action"]
                    params = meta.get("params") or {}
                    samples, rate = synth.from_wav_bytes(parts["audio"])
                except Exception as exc:
                    self._json(400, {"code": "bad_request", "message": str(exc)})
                    return
                if action not in SYNTH_ACTIONS:
                    self._json(
                        422,
                        {"code": "unsupported_action",
                         "message": f"shim supports {SYNTH_ACTIONS}, got {action!r}"},
                    )
                    return
                try:
                    if action == "trim_leading_silence":
                        out = synth.trim_leading_silence(
                            samples, rate,
                            threshold_db=params.get("threshold_db", -40.0),
                            min_window_ms=params.get("min_window_ms", 10.0),
                        )
                    else:
                        out = synth.apply_gain(
                            samples, params.get("gain_db"), params.get("target_peak")
                        )
                except ValueError as exc:
                    self._json(422, {"code": "process_failed", "message": str(exc)})
                    return
                self._wav(synth.to_wav_bytes(out, rate))

        self._server = ThreadingHTTPServer((self.config.host, self.config.port), Handler)
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()
        return self.url

    @property
    def url(self) -> str:
        assert self._server is not None
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


def serve(config: ShimConfig) -> ShimServer:
    server = ShimServer(config)
    server.start()
    return server


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="toolshim", description="Tool wire-protocol service")
    parser.add_argument("--config", help="ShimConfig JSON file")
    parser.add_argument("--tool-id", default=None)
    parser.add_argument("--mode", choices=("synth", "subprocess"), default=None)
    parser.add_argument("--command", default=None, help="subprocess command template")
    parser.add_argument("--sample-rate", type=int, default=None)
    parser.add_argument("--port", type=int, default=None)
    args = parser.parse_args(argv)
    config = ShimConfig.from_file(args.config) if args.config else ShimConfig()
    for key in ("tool_id", "mode", "command", "sample_rate", "port"):
        value = getattr(args, key)
        if value is not None:
            setattr(config, key, value)
    try:
        config.check()
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    server = ShimServer(config)
    url = server.start()
    print(f"toolshim [{config.mode}] serving {config.tool_id} at {url}")
    try:
        threading.Event().wait()
    except KeyboardInterrupt:
        server.stop()
    return 0


if __name__ == "__main__":
    sys.exit(main())
