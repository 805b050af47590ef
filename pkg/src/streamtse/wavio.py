"""PCM16 mono 16 kHz WAV reading and writing."""

from __future__ import annotations

import wave
from pathlib import Path

import numpy as np

from .audio import SAMPLE_RATE, Waveform
from .errors import WavFormatError


def read_wav(path: str | Path) -> Waveform:
    try:
        with wave.open(str(path), "rb") as wf:
            channels = wf.getnchannels()
            width = wf.getsampwidth()
            rate = wf.getframerate()
            comp = wf.getcomptype()
            raw = wf.readframes(wf.getnframes())
    except (wave.Error, EOFError) as exc:
        raise WavFormatError(f"{path}: not a readable PCM WAV file ({exc})") from exc
    problems = []
    if comp != "NONE":
        problems.append(f"compression {comp!r}")
    if width != 2:
        problems.append(f"{8 * width}-bit samples (need 16-bit)")
    if channels != 1:
        problems.append(f"{channels} channels (need mono)")
    if rate != SAMPLE_RATE:
        problems.append(f"{rate} Hz (need {SAMPLE_RATE} Hz)")
    if problems:
        raise WavFormatError(f"{path}: unsupported format: " + ", ".join(problems))
    pcm = np.frombuffer(raw, dtype="<i2")
    return Waveform(pcm.astype(np.float64) / 32768.0)


def write_wav(path: str | Path, w: Waveform) -> None:
    pcm = np.clip(np.round(w.samples * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(w.sample_rate_hz)
        wf.writeframes(pcm.tobytes())
