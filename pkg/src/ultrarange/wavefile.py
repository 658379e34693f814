"""Mono 16-bit PCM WAV export/import for stream debugging."""

from __future__ import annotations

import wave

import numpy as np

from .dsp import SampleBuffer

__all__ = ["write_wav", "read_wav"]


def write_wav(path, samples, sample_rate_hz: float, normalize: bool = False) -> None:
    """Write mono 16-bit PCM (little-endian). Values are clipped to [-1, 1];
    pass ``normalize=True`` to rescale the peak to full scale first."""
    x = np.asarray(samples, dtype=np.float64)
    if normalize:
        peak = np.abs(x).max() if len(x) else 0.0
        if peak > 0:
            x = x / peak
    q = np.clip(np.round(x * 32767.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(int(round(sample_rate_hz)))
        w.writeframes(q.tobytes())


def read_wav(path) -> SampleBuffer:
    with wave.open(str(path), "rb") as w:
        if w.getnchannels() != 1:
            raise ValueError(f"{path}: expected mono, got {w.getnchannels()} channels")
        if w.getsampwidth() != 2:
            raise ValueError(f"{path}: expected 16-bit PCM, got {8 * w.getsampwidth()} bits")
        rate = float(w.getframerate())
        raw = w.readframes(w.getnframes())
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32767.0
    return SampleBuffer(samples, rate)
