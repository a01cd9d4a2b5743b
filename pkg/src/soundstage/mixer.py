"""Timeline mixing and local post-processing of audio artifacts.

All functions are pure: they return new artifacts and never mutate inputs.
Summation order inside mixdown is fixed (stems sorted by event id) so equal
inputs produce bit-equal mixes regardless of caller ordering.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ParamOutOfRange, SchemaViolation, UnsupportedRate
from .wav_io import AudioArtifact

SUPPORTED_RATES = (16000, 22050, 24000, 44100, 48000)

DEFAULT_TARGET_RATE = 48000
DEFAULT_SILENCE_THRESHOLD_DB = -40.0
DEFAULT_SILENCE_WINDOW_MS = 10.0

#: trim never leaves less than this much audio
TRIM_FLOOR_S = 0.1

LIMITER_CEILING = 0.99

GAIN_DB_MIN = -24.0
GAIN_DB_MAX = 12.0


@dataclass(frozen=True)
class Stem:
    """One accepted event artifact plus its placement on the shared timeline."""

    event_id: str
    artifact: AudioArtifact
    start_time: float
    gain: float = 1.0


@dataclass(frozen=True)
class PostProcessAction:
    """A single fix applied to a parent artifact by a refinement step."""

    kind: str  # trim_leading_silence | apply_gain | fade | external
    params: dict = field(default_factory=dict)
    tool_id: str | None = None
    action: str | None = None

    def check(self) -> None:
        if self.kind == "trim_leading_silence":
            if self.params.get("threshold_db", DEFAULT_SILENCE_THRESHOLD_DB) >= 0:
                raise ParamOutOfRange("trim threshold_db must be negative")
        elif self.kind == "apply_gain":
            if "gain_db" not in self.params and "target_peak" not in self.params:
                raise SchemaViolation("apply_gain needs gain_db or target_peak", field="params")
        elif self.kind == "fade":
            if self.params.get("in_ms", 0.0) < 0 or self.params.get("out_ms", 0.0) < 0:
                raise ParamOutOfRange("fade lengths must be >= 0")
        elif self.kind == "external":
            if not self.tool_id or not self.action:
                raise SchemaViolation("external action needs tool_id and action", field="tool_id")
        else:
            raise SchemaViolation(f"unknown post-process kind: {self.kind}", field="kind")


def resample(artifact: AudioArtifact, target_rate: int) -> AudioArtifact:
    """Linear-interpolation resample; identity when rates already match."""
    if target_rate not in SUPPORTED_RATES:
        raise UnsupportedRate(f"target rate {target_rate} not in {SUPPORTED_RATES}")
    if artifact.sample_rate == target_rate:
        return artifact
    src_rate = artifact.sample_rate
    n_in = artifact.frames
    n_out = max(1, round(n_in * target_rate / src_rate))
    in_times = np.arange(n_in, dtype=np.float64) / src_rate
    out_times = np.arange(n_out, dtype=np.float64) / target_rate
    if artifact.channels == 1:
        data = np.interp(out_times, in_times, artifact.samples)
    else:
        data = np.stack(
            [np.interp(out_times, in_times, artifact.samples[:, c]) for c in range(2)],
            axis=1,
        )
    return AudioArtifact(samples=data, sample_rate=target_rate, channels=artifact.channels)


def truncate(artifact: AudioArtifact, max_duration_s: float) -> AudioArtifact:
    """Drop frames past ``max_duration_s``; shorter artifacts pass through."""
    max_frames = round(max_duration_s * artifact.sample_rate)
    if artifact.frames <= max_frames:
        return artifact
    return AudioArtifact(
        samples=artifact.samples[:max_frames],
        sample_rate=artifact.sample_rate,
        channels=artifact.channels,
    )


def mixdown(stems: list[Stem], target_rate: int = DEFAULT_TARGET_RATE, limit: bool = True) -> AudioArtifact:
    """Sum all stems onto one mono timeline at ``target_rate``.

    Each stem is mono-mixed, resampled, offset by round(start_time * rate)
    frames, and scaled by its gain. Regions no stem covers stay silent. When
    the summed peak exceeds the ceiling the whole mix is scaled uniformly,
    preserving waveform shape.
    """
    if not stems:
        raise ValueError("mixdown needs at least one stem")
    prepared: list[tuple[int, np.ndarray]] = []
    total_frames = 0
    for stem in sorted(stems, key=lambda s: s.event_id):
        mono = resample(stem.artifact.mono(), target_rate)
        offset = round(stem.start_time * target_rate)
        data = mono.samples * stem.gain
        prepared.append((offset, data))
        total_frames = max(total_frames, offset + data.shape[0])
    out = np.zeros(total_frames, dtype=np.float64)
    for offset, data in prepared:
        out[offset : offset + data.shape[0]] += data
    if limit:
        peak = float(np.max(np.abs(out))) if total_frames else 0.0
        if peak > LIMITER_CEILING:
            out = out * (LIMITER_CEILING / peak)
    return AudioArtifact(samples=out, sample_rate=target_rate, channels=1)


def _window_rms(chunk: np.ndarray) -> float:
    if chunk.size == 0:
        return 0.0
    return float(np.sqrt(np.mean(np.square(chunk))))


def trim_leading_silence(
    artifact: AudioArtifact,
    threshold_db: float = DEFAULT_SILENCE_THRESHOLD_DB,
    min_window_ms: float = DEFAULT_SILENCE_WINDOW_MS,
) -> AudioArtifact:
    """Strip the leading run of windows whose RMS stays under the threshold.

    Trimming is window-granular and never leaves less than TRIM_FLOOR_S of
    audio, so an all-silent artifact keeps its final slice instead of
    vanishing.
    """
    if threshold_db >= 0:
        raise ParamOutOfRange("threshold_db must be negative (dBFS)")
    rate = artifact.sample_rate
    window = max(1, round(min_window_ms / 1000.0 * rate))
    threshold = 10.0 ** (threshold_db / 20.0)
    mono = artifact.mono().samples
    cut = artifact.frames  # all-silent default: cut everything, floor below
    for start in range(0, artifact.frames, window):
        if _window_rms(mono[start : start + window]) >= threshold:
            cut = start
            break
    floor_frames = round(TRIM_FLOOR_S * rate)
    cut = min(cut, max(0, artifact.frames - floor_frames))
    if cut == 0:
        return artifact
    return AudioArtifact(
        samples=artifact.samples[cut:], sample_rate=rate, channels=artifact.channels
    )


def apply_gain(artifact: AudioArtifact, gain_db: float) -> AudioArtifact:
    if not (GAIN_DB_MIN <= gain_db <= GAIN_DB_MAX):
        raise ParamOutOfRange(f"gain_db {gain_db} outside [{GAIN_DB_MIN}, {GAIN_DB_MAX}]")
    factor = 10.0 ** (gain_db / 20.0)
    return AudioArtifact(
        samples=artifact.samples * factor,
        sample_rate=artifact.sample_rate,
        channels=artifact.channels,
    )


def fade(artifact: AudioArtifact, in_ms: float = 0.0, out_ms: float = 0.0) -> AudioArtifact:
    if in_ms < 0 or out_ms < 0:
        raise ParamOutOfRange("fade lengths must be >= 0")
    rate = artifact.sample_rate
    n_in = round(in_ms / 1000.0 * rate)
    n_out = round(out_ms / 1000.0 * rate)
    if n_in + n_out > artifact.frames:
        raise ParamOutOfRange("combined fades exceed artifact duration")
    if n_in == 0 and n_out == 0:
        return artifact
    gains = np.ones(artifact.frames, dtype=np.float64)
    if n_in:
        gains[:n_in] = np.arange(n_in, dtype=np.float64) / n_in
    if n_out:
        ramp = np.arange(n_out - 1, -1, -1, dtype=np.float64) / max(n_out - 1, 1)
        gains[artifact.frames - n_out :] = ramp
    if artifact.channels == 2:
        data = artifact.samples * gains[:, None]
    else:
        data = artifact.samples * gains
    return AudioArtifact(samples=data, sample_rate=rate, channels=artifact.channels)


def apply_local_action(artifact: AudioArtifact, action: PostProcessAction) -> AudioArtifact:
    """Run a non-external post-process action on an artifact."""
    action.check()
    if action.kind == "trim_leading_silence":
        return trim_leading_silence(
            artifact,
            threshold_db=action.params.get("threshold_db", DEFAULT_SILENCE_THRESHOLD_DB),
            min_window_ms=action.params.get("min_window_ms", DEFAULT_SILENCE_WINDOW_MS),
        )
    if action.kind == "apply_gain":
        if "target_peak" in action.params:
            peak = float(np.max(np.abs(artifact.samples)))
            if peak <= 0:
                return artifact
            gain_db = 20.0 * math.log10(action.params["target_peak"] / peak)
            gain_db = min(0.0, max(GAIN_DB_MIN, gain_db))
        else:
            gain_db = float(action.params["gain_db"])
        return apply_gain(artifact, gain_db)
    if action.kind == "fade":
        return fade(
            artifact,
            in_ms=action.params.get("in_ms", 0.0),
            out_ms=action.params.get("out_ms", 0.0),
        )
    raise ValueError(f"action kind {action.kind} is not a local operation")
