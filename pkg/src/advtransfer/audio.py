"""Audio samples and 16-bit PCM WAV input/output."""

from __future__ import annotations

import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np

SAMPLE_RATE = 16000
PCM_SCALE = 32767.0
PCM_LSB = 1.0 / PCM_SCALE


@dataclass
class AudioSample:
    id: str
    waveform: np.ndarray
    transcript: str
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        self.waveform = np.asarray(self.waveform, dtype=np.float64)
        if self.waveform.ndim != 1:
            raise ValueError(f"waveform must be mono 1-D, got shape {self.waveform.shape}")


def to_pcm16(waveform) -> np.ndarray:
    x = np.clip(np.asarray(waveform, dtype=np.float64), -1.0, 1.0)
    return np.round(x * PCM_SCALE).astype("<i2")


def from_pcm16(pcm) -> np.ndarray:
    return np.asarray(pcm, dtype=np.float64) / PCM_SCALE


def write_wav(path: str | Path, waveform, sample_rate: int = SAMPLE_RATE) -> None:
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(sample_rate)
        fh.writeframes(to_pcm16(waveform).tobytes())


def read_wav(path: str | Path) -> tuple[np.ndarray, int]:
    with wave.open(str(path), "rb") as fh:
        if fh.getnchannels() != 1 or fh.getsampwidth() != 2:
            raise ValueError(f"{path}: expected 16-bit mono PCM")
        rate = fh.getframerate()
        pcm = np.frombuffer(fh.readframes(fh.getnframes()), dtype="<i2")
    return from_pcm16(pcm), rate
