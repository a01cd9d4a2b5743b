"""Wire-protocol conformance checks runnable against any tool service.

Used both against our own mock server and against out-of-process shims; a
shim passes when this suite returns no failures.
"""
from __future__ import annotations

import json

import requests

from .gateway import MOCK_SAMPLE_RATE, mock_synthesize
from .library import GenerationSpec, descriptor_from_json
from .wav_io import decode_wav, encode_wav

PARITY_PROMPT = "a"
PARITY_DURATION_S = 1.0


def run_conformance(base_url: str, check_synth_parity: bool = True, timeout_s: float = 30.0) -> list[str]:
    """Drive describe/generate/process round-trips; return failure strings."""
    failures: list[str] = []

    # describe: well-formed descriptor JSON
    tool_id = None
    try:
        resp = requests.get(f"{base_url}/v1/describe", timeout=timeout_s)
        if resp.status_code != 200:
            failures.append(f"describe: status {resp.status_code}")
        else:
            descriptor = descriptor_from_json(resp.json())
            tool_id = descriptor.id
    except Exception as exc:
        failures.append(f"describe: {exc}")

    # generate: WAV payload, sane duration, deterministic replays
    gen_body = {
        "tool_id": tool_id or "conformance",
        "prompt": PARITY_PROMPT,
        "duration_s": PARITY_DURATION_S,
        "extra": {},
    }
    wav_bytes = None
    try:
        first = requests.post(f"{base_url}/v1/generate", json=gen_body, timeout=timeout_s)
        if first.status_code != 200:
            failures.append(f"generate: status {first.status_code}")
        elif "audio/wav" not in first.headers.get("Content-Type", ""):
            failures.append(f"generate: content-type {first.headers.get('Content-Type')!r}")
        else:
            wav_bytes = first.content
            artifact = decode_wav(wav_bytes)
            if abs(artifact.duration_s - PARITY_DURATION_S) > 0.10 * PARITY_DURATION_S:
                failures.append(f"generate: duration {artifact.duration_s:.3f}s off request")
            second = requests.post(f"{base_url}/v1/generate", json=gen_body, timeout=timeout_s)
            if second.content != wav_bytes:
                failures.append("generate: replay not byte-identical")
    except Exception as exc:
        failures.append(f"generate: {exc}")

    # synth parity against the engine's reference synthesizer
    if check_synth_parity and wav_bytes is not None:
        reference = encode_wav(
            mock_synthesize(
                GenerationSpec(tool_id="ref", prompt=PARITY_PROMPT, duration_s=PARITY_DURATION_S),
                sample_rate=MOCK_SAMPLE_RATE,
            )
        )
        if wav_bytes != reference:
            failures.append("generate: synth output differs from reference recipe")

    # process: trim round-trip on generated audio
    if wav_bytes is not None:
        meta = {
            "tool_id": tool_id or "conformance",
            "action": "trim_leading_silence",
            "params": {"threshold_db": -40.0, "min_window_ms": 10.0},
        }
        try:
            resp = requests.post(
                f"{base_url}/v1/process",
                data={"request": json.dumps(meta)},
                files={"audio": ("input.wav", wav_bytes, "audio/wav")},
                timeout=timeout_s,
            )
            if resp.status_code != 200:
                failures.append(f"process: status {resp.status_code}")
            else:
                decode_wav(resp.content)
        except Exception as exc:
            failures.append(f"process: {exc}")

    # error shape: invalid generate payload must give non-2xx JSON {code,message}
    try:
        resp = requests.post(
            f"{base_url}/v1/generate", json={"prompt": "", "duration_s": -1}, timeout=timeout_s
        )
        if 200 <= resp.status_code < 300:
            failures.append("errors: invalid payload accepted")
        else:
            payload = resp.json()
            if "code" not in payload or "message" not in payload:
                failures.append("errors: body missing code/message")
    except Exception as exc:
        failures.append(f"errors: {exc}")

    return failures
