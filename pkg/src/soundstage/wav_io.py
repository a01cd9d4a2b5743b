"""RIFF/PCM16 WAV encode and decode for audio artifacts."""
from __future__ import annotations

import io
import wave
from dataclasses import dataclass

import numpy as np

from .errors import DecodeError


@dataclass
class AudioArtifact:
    """Decoded audio: float samples in [-1, 1] shaped (frames,) or (frames, 2)."""

    samples: np.ndarray
    sample_rate: int
    channels: int

    @property
    def frames(self) -> int:
        return int(self.samples.shape[0])

    @property
    def duration_s(self) -> float:
        return self.frames / self.sample_rate

    def check(self) -> None:
        if self.channels not in (1, 2):
            raise DecodeError(f"unsupported channel count: {self.channels}")
        if self.frames == 0:
            raise DecodeError("artifact holds no frames")
        if not np.all(np.isfinite(self.samples)):
            raise DecodeError("artifact contains non-finite samples")
        peak = float(np.max(np.abs(self.samples)))
        if peak > 4.0:
            raise DecodeError(f"artifact peak {peak:.3f} exceeds 4.0 pre-limit bound")

    def mono(self) -> "AudioArtifact":
        if self.channels == 1:
            return self
        mixed = self.samples.mean(axis=1)
        return AudioArtifact(samples=mixed, sample_rate=self.sample_rate, channels=1)


def float_to_pcm16(samples: np.ndarray) -> np.ndarray:
    """Quantize floats to int16 with round-half-up; pinned for bit parity."""
    scaled = np.floor(samples * 32767.0 + 0.5)
    return np.clip(scaled, -32768, 32767).astype("<i2")


def pcm16_to_float(raw: np.ndarray) -> np.ndarray:
    return raw.astype(np.float64) / 32767.0


def encode_wav(artifact: AudioArtifact) -> bytes:
    data = artifact.samples
    if artifact.channels == 1 and data.ndim == 1:
        interleaved = float_to_pcm16(data)
    else:
        interleaved = float_to_pcm16(data.reshape(-1))
    buf = io.BytesIO()
    with wave.open(buf, "wb") as wav:
        wav.setnchannels(artifact.channels)
        wav.setsampwidth(2)
        wav.setframerate(artifact.sample_rate)
        wav.writeframes(interleaved.tobytes())
    return buf.getvalue()


def decode_wav(data: bytes) -> AudioArtifact:
    try:
        with wave.open(io.BytesIO(data), "rb") as wav:
            channels = wav.getnchannels()
            width = wav.getsampwidth()
            rate = wav.getframerate()
            frames = wav.readframes(wav.getnframes())
    except (wave.Error, EOFError) as exc:
        raise DecodeError(f"not a decodable WAV: {exc}") from exc
    if width != 2:
        raise DecodeError(f"only PCM16 supported, got sample width {width}")
    try:
        raw = np.frombuffer(frames, dtype="<i2")
        if channels == 2:
            raw = raw.reshape(-1, 2)
        elif channels != 1:
            raise DecodeError(f"unsupported channel count: {channels}")
    except ValueError as exc:
        raise DecodeError(f"malformed PCM body: {exc}") from exc
    artifact = AudioArtifact(samples=pcm16_to_float(raw), sample_rate=rate, channels=channels)
    artifact.check()
    return artifact


def write_wav(path, artifact: AudioArtifact) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_wav(artifact))


def read_wav(path) -> AudioArtifact:
    with open(path, "rb") as fh:
        return decode_wav(fh.read())
