"""Deterministic sine synthesis, bit-compatible with the engine's mock.

The recipe is pinned in PROTOCOL.md: frequency = 200 + (fnv1a32(prompt) mod
1600) Hz over the UTF-8 prompt, amplitude 0.3, float64 sin(2*pi*f*n/rate)
from frame 0, quantized with floor(x * 32767 + 0.5). Any change here breaks
byte parity with golden WAVs.
"""
from __future__ import annotations

import io
import wave

import numpy as np

AMPLITUDE = 0.3
FREQ_BASE = 200
FREQ_SPAN = 1600


def fnv1a32(data: bytes) -> int:
    h = 0x811C9DC5
    for byte in data:
        h ^= byte
        h = (h * 0x01000193) & 0xFFFFFFFF
    return h


def quantize_pcm16(samples: np.ndarray) -> np.ndarray:
    scaled = np.floor(samples * 32767.0 + 0.5)
    return np.clip(scaled, -32768, 32767).astype("<i2")


def synthesize(prompt: str, duration_s: float, sample_rate: int) -> np.ndarray:
    freq = FREQ_BASE + (fnv1a32(prompt.encode("utf-8")) % FREQ_SPAN)
    n = np.arange(round(duration_s * sample_rate), dtype=np.float64)
    return AMPLITUDE * np.sin(2.0 * np.pi * freq * n / sample_rate)


def to_wav_bytes(samples: np.ndarray, sample_rate: int) -> bytes:
    buf = io.BytesIO()
    with wave.open(buf, "wb") as wav:
        wav.setnchannels(1)
        wav.setsampwidth(2)
        wav.setframerate(sample_rate)
        wav.writeframes(quantize_pcm16(samples).tobytes())
    return buf.getvalue()


def from_wav_bytes(data: bytes) -> tuple[np.ndarray, int]:
    with wave.open(io.BytesIO(data), "rb") as wav:
        if wav.getsampwidth() != 2:
            raise ValueError("only PCM16 input supported")
        rate = wav.getframerate()
        channels = wav.getnchannels()
        raw = np.frombuffer(wav.readframes(wav.getnframes()), dtype="<i2")
    samples = raw.astype(np.float64) / 32767.0
    if channels == 2:
        samples = samples.reshape(-1, 2).mean(axis=1)
    return samples, rate


def trim_leading_silence(
    samples: np.ndarray, sample_rate: int,
    threshold_db: float = -40.0, min_window_ms: float = 10.0,
) -> np.ndarray:
    window = max(1, round(min_window_ms / 1000.0 * sample_rate))
    threshold = 10.0 ** (threshold_db / 20.0)
    cut = len(samples)
    for start in range(0, len(samples), window):
        chunk = samples[start : start + window]
        if chunk.size and float(np.sqrt(np.mean(np.square(chunk)))) >= threshold:
            cut = start
            break
    floor_frames = round(0.1 * sample_rate)
    cut = min(cut, max(0, len(samples) - floor_frames))
    return samples[cut:]


def apply_gain(samples: np.ndarray, gain_db: float | None, target_peak: float | None) -> np.ndarray:
    if target_peak is not None:
        peak = float(np.max(np.abs(samples))) if samples.size else 0.0
        if peak <= 0:
            return samples
        import math

        gain_db = min(0.0, max(-24.0, 20.0 * math.log10(target_peak / peak)))
    if gain_db is None:
        raise ValueError("apply_gain needs gain_db or target_peak")
    if not -24.0 <= gain_db <= 12.0:
        raise ValueError(f"gain_db {gain_db} outside [-24, 12]")
    return samples * (10.0 ** (gain_db / 20.0))
