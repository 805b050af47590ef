"""Waveform chunking, causal log-mel features and synthetic two-speaker scenes.

Everything runs at 16 kHz. A codec frame is 40 ms (640 samples), and the mel
hop is locked to that frame so a chunk of ``m`` codec frames yields exactly
``m`` feature frames. Each feature frame looks at an 80 ms window: the
current hop plus the hop before it, which for the first frame of a chunk is
carried over from the previous chunk.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import GranularityError, ShapeError

SAMPLE_RATE = 16000
FRAME_MS = 40
FRAME_SAMPLES = SAMPLE_RATE * FRAME_MS // 1000  # 640
STANDARD_CHUNK_MS = (80, 160, 400, 560, 800, 2000)


@dataclass(frozen=True)
class Waveform:
    samples: np.ndarray
    sample_rate_hz: int = SAMPLE_RATE

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ShapeError(f"waveform must be 1-D, got shape {samples.shape}")
        if self.sample_rate_hz != SAMPLE_RATE:
            raise ValueError(f"sample rate must be {SAMPLE_RATE} Hz, got {self.sample_rate_hz}")
        if not np.all(np.isfinite(samples)):
            raise ValueError("waveform contains non-finite samples")
        object.__setattr__(self, "samples", samples)

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def duration_s(self) -> float:
        return len(self) / self.sample_rate_hz


@dataclass(frozen=True)
class ChunkSpec:
    chunk_ms: int
    samples_per_chunk: int
    codec_frames_per_chunk: int

    @property
    def duration_s(self) -> float:
        return self.chunk_ms / 1000.0


def validate_chunk_spec(chunk_ms: int) -> ChunkSpec:
    """Build a ChunkSpec, rejecting durations that are not 40 ms multiples."""
    chunk_ms = int(chunk_ms)
    if chunk_ms <= 0:
        raise GranularityError(f"chunk_ms must be positive, got {chunk_ms}")
    if chunk_ms % FRAME_MS != 0:
        raise GranularityError(
            f"chunk_ms={chunk_ms} is not a multiple of the {FRAME_MS} ms codec frame "
            f"(remainder {chunk_ms % FRAME_MS} ms)"
        )
    return ChunkSpec(
        chunk_ms=chunk_ms,
        samples_per_chunk=chunk_ms * SAMPLE_RATE // 1000,
        codec_frames_per_chunk=chunk_ms // FRAME_MS,
    )


@dataclass(frozen=True)
class AudioChunk:
    samples: np.ndarray
    step: int
    n_valid: int

    @property
    def padded(self) -> bool:
        return self.n_valid < self.samples.shape[0]


def chunk_waveform(w: Waveform, spec: ChunkSpec) -> list[AudioChunk]:
    """Split ``w`` into fixed-size chunks; the tail chunk is zero-padded.

    Steps are numbered from 1.
    """
    n = len(w)
    if n == 0:
        raise ShapeError("cannot chunk an empty waveform")
    size = spec.samples_per_chunk
    chunks = []
    for i, start in enumerate(range(0, n, size)):
        piece = w.samples[start:start + size]
        n_valid = piece.shape[0]
        if n_valid < size:
            piece = np.concatenate([piece, np.zeros(size - n_valid)])
        else:
            piece = piece.copy()
        chunks.append(AudioChunk(samples=piece, step=i + 1, n_valid=n_valid))
    return chunks


def unchunk(chunks: list[AudioChunk]) -> np.ndarray:
    """Concatenate chunk contents, dropping declared padding."""
    return np.concatenate([c.samples[:c.n_valid] for c in chunks])


# ---------------------------------------------------------------------------
# log-mel frontend


@dataclass(frozen=True)
class MelConfig:
    n_mels: int = 40
    hop: int = FRAME_SAMPLES
    window: int = 2 * FRAME_SAMPLES
    log_floor: float = 1e-10
    fmin: float = 0.0
    fmax: float = SAMPLE_RATE / 2


def _hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f) / 700.0)


def _mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m) / 2595.0) - 1.0)


def mel_filterbank(n_mels: int, n_fft: int, sample_rate: int = SAMPLE_RATE,
                   fmin: float = 0.0, fmax: float | None = None) -> np.ndarray:
    """Triangular HTK-style mel filterbank of shape (n_mels, n_fft // 2 + 1)."""
    fmax = sample_rate / 2 if fmax is None else fmax
    bins = np.fft.rfftfreq(n_fft, 1.0 / sample_rate)
    edges = _mel_to_hz(np.linspace(_hz_to_mel(fmin), _hz_to_mel(fmax), n_mels + 2))
    fb = np.zeros((n_mels, bins.shape[0]))
    for i in range(n_mels):
        lo, mid, hi = edges[i], edges[i + 1], edges[i + 2]
        rising = (bins - lo) / (mid - lo)
        falling = (hi - bins) / (hi - mid)
        fb[i] = np.maximum(0.0, np.minimum(rising, falling))
    return fb


class _MelKernel:
    def __init__(self, cfg: MelConfig):
        self.cfg = cfg
        self.hann = np.hanning(cfg.window + 1)[:-1]
        self.fb = mel_filterbank(cfg.n_mels, cfg.window, fmin=cfg.fmin, fmax=cfg.fmax)

    def frame(self, window: np.ndarray) -> np.ndarray:
        spec = np.fft.rfft(window * self.hann)
        power = spec.real ** 2 + spec.imag ** 2
        return np.log(np.maximum(self.fb @ power, self.cfg.log_floor))


_KERNELS: dict[MelConfig, _MelKernel] = {}


def _kernel(cfg: MelConfig) -> _MelKernel:
    k = _KERNELS.get(cfg)
    if k is None:
        k = _KERNELS[cfg] = _MelKernel(cfg)
    return k


@dataclass(frozen=True)
class MelFrames:
    frames: np.ndarray

    @property
    def n_mels(self) -> int:
        return self.frames.shape[1]

    def __len__(self) -> int:
        return self.frames.shape[0]


@dataclass
class FrontendState:
    """Samples carried into the next chunk's first analysis window."""

    carry: np.ndarray = field(default_factory=lambda: np.zeros(FRAME_SAMPLES))
    frames_emitted: int = 0

    @classmethod
    def initial(cls, cfg: MelConfig = MelConfig()) -> "FrontendState":
        return cls(carry=np.zeros(cfg.window - cfg.hop))


def _log_mel_frames(history: np.ndarray, samples: np.ndarray, cfg: MelConfig) -> np.ndarray:
    # history holds the (window - hop) samples preceding ``samples``
    if samples.shape[0] % cfg.hop != 0:
        raise ShapeError(f"{samples.shape[0]} samples is not a multiple of hop {cfg.hop}")
    k = _kernel(cfg)
    buf = np.concatenate([history, samples])
    n = samples.shape[0] // cfg.hop
    out = np.empty((n, cfg.n_mels))
    for i in range(n):
        out[i] = k.frame(buf[i * cfg.hop:i * cfg.hop + cfg.window])
    return out


def log_mel(chunk: AudioChunk, carry: FrontendState,
            cfg: MelConfig = MelConfig()) -> tuple[MelFrames, FrontendState]:
    """Causal log-mel for one chunk, returning the advanced frontend state."""
    frames = _log_mel_frames(carry.carry, chunk.samples, cfg)
    tail = np.concatenate([carry.carry, chunk.samples])[-(cfg.window - cfg.hop):]
    return MelFrames(frames), FrontendState(carry=tail.copy(),
                                            frames_emitted=carry.frames_emitted + frames.shape[0])


def log_mel_offline(samples: np.ndarray, cfg: MelConfig = MelConfig()) -> MelFrames:
    """Log-mel of a whole signal with silent left context (the streaming oracle)."""
    samples = np.asarray(samples, dtype=np.float64)
    return MelFrames(_log_mel_frames(np.zeros(cfg.window - cfg.hop), samples, cfg))


# ---------------------------------------------------------------------------
# synthetic scenes

# Every partial sits on a 50 Hz grid below 800 Hz, so each synthetic speaker
# lives in the subspace the mock codec projects onto.
SPEAKER_F0 = (100.0, 150.0, 200.0, 250.0)
HARMONIC_CEILING_HZ = 800.0
TARGET_RMS = 0.1
NOISE_DB = -40.0


def _speaker_template(speaker: int) -> tuple[float, np.ndarray]:
    f0 = SPEAKER_F0[speaker]
    n_harm = int(HARMONIC_CEILING_HZ // f0)
    rng = np.random.default_rng(10_007 + speaker)
    amps = rng.uniform(0.4, 1.0, n_harm) / np.arange(1, n_harm + 1) ** 0.5
    return f0, amps


def _envelope(rng: np.random.Generator, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Syllable-like amplitude envelope plus the syllable index of each sample."""
    env = np.zeros(n)
    syll = np.zeros(n, dtype=int)
    pos, k = 0, 0
    ramp = int(0.02 * SAMPLE_RATE)
    while pos < n:
        length = int(rng.uniform(0.12, 0.32) * SAMPLE_RATE)
        gain = 0.0 if rng.random() < 0.15 else rng.uniform(0.4, 1.0)
        seg = np.full(length, gain)
        r = min(ramp, length // 2)
        shape = 0.5 - 0.5 * np.cos(np.pi * np.arange(r) / r)
        seg[:r] *= shape
        seg[length - r:] *= shape[::-1]
        stop = min(n, pos + length)
        env[pos:stop] = seg[:stop - pos]
        syll[pos:stop] = k
        pos, k = stop, k + 1
    return env, syll


def synth_voice(speaker: int, n_samples: int, rng: np.random.Generator) -> np.ndarray:
    """One utterance of a synthetic speaker: harmonic template times a random envelope."""
    f0, amps = _speaker_template(speaker)
    env, syll = _envelope(rng, n_samples)
    n_syll = syll.max() + 1
    colour = rng.uniform(0.7, 1.3, (n_syll, amps.shape[0]))
    phase = rng.uniform(0, 2 * np.pi, amps.shape[0])
    t = np.arange(n_samples) / SAMPLE_RATE
    sig = np.zeros(n_samples)
    for h in range(amps.shape[0]):
        sig += amps[h] * colour[syll, h] * np.sin(2 * np.pi * (h + 1) * f0 * t + phase[h])
    sig *= env
    rms = np.sqrt(np.mean(sig ** 2)) or 1.0
    sig *= TARGET_RMS / rms
    sig += rng.normal(0.0, TARGET_RMS * 10 ** (NOISE_DB / 20), n_samples)
    return sig


@dataclass(frozen=True)
class SynthScene:
    mixture: Waveform
    target: Waveform
    interferer: Waveform
    reference: Waveform
    snr_db: float
    target_speaker: int
    interferer_speaker: int


def power_db(x: np.ndarray) -> float:
    return 10.0 * np.log10(np.mean(np.asarray(x) ** 2))


def synth_scene(seed: int, duration_ms: int, snr_db: float = 0.0,
                ref_ms: int = 5000) -> SynthScene:
    """Deterministic two-speaker mixture with a separate reference utterance.

    ``interferer`` is stored already scaled, so ``mixture == target + interferer``.
    """
    if duration_ms <= 0:
        raise ValueError("duration_ms must be positive")
    rng = np.random.default_rng(seed)
    tgt_spk, int_spk = (int(s) for s in rng.choice(len(SPEAKER_F0), 2, replace=False))
    n = duration_ms * SAMPLE_RATE // 1000
    target = synth_voice(tgt_spk, n, rng)
    interferer = synth_voice(int_spk, n, rng)
    reference = synth_voice(tgt_spk, ref_ms * SAMPLE_RATE // 1000, rng)

    gain = np.sqrt(np.mean(target ** 2) / (np.mean(interferer ** 2) * 10 ** (snr_db / 10)))
    interferer = interferer * gain
    mixture = target + interferer
    peak = max(np.abs(mixture).max(), np.abs(reference).max())
    if peak > 0.9:
        s = 0.9 / peak
        target, interferer, reference = target * s, interferer * s, reference * s
        mixture = target + interferer
    return SynthScene(
        mixture=Waveform(mixture), target=Waveform(target), interferer=Waveform(interferer),
        reference=Waveform(reference), snr_db=float(snr_db),
        target_speaker=tgt_spk, interferer_speaker=int_spk,
    )
