"""Deterministic stand-in for a 16 kHz RVQ neural codec.

A 640-sample frame is projected onto a 32-dimensional latent by a fixed
orthonormal map ``P``: sine/cosine pairs at 50, 100, ..., 800 Hz (all exact
DFT bins of a 40 ms frame) mixed by a seeded rotation. Latents are quantized
by 32 residual stages of 1024 seeded codewords each. Decoding applies ``P.T``
frame by frame, so signals made of those partials survive a round trip.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .audio import FRAME_SAMPLES, SAMPLE_RATE, AudioChunk, ChunkSpec
from .errors import LengthError, ShapeError

D_LATENT = 32
N_QUANTIZERS = 32
CODEBOOK_SIZE = 1024
CROSSFADE_SAMPLES = SAMPLE_RATE * 10 // 1000  # 10 ms


@dataclass(frozen=True)
class CodecFrameTokens:
    ids: tuple[int, ...]

    def __post_init__(self):
        if len(self.ids) != N_QUANTIZERS:
            raise ShapeError(f"token stack must have {N_QUANTIZERS} ids, got {len(self.ids)}")
        if any(not 0 <= i < CODEBOOK_SIZE for i in self.ids):
            raise ValueError("token id outside codebook range")


@dataclass(frozen=True)
class TokenChunk:
    """Per-frame semantic ids (quantizer 0) and, optionally, the full stacks."""

    first_q: tuple[int, ...]
    full: tuple[CodecFrameTokens, ...] | None = None

    def __post_init__(self):
        if self.full is not None:
            if len(self.full) != len(self.first_q):
                raise ShapeError("first_q and full disagree in length")
            if any(f.ids[0] != q for f, q in zip(self.full, self.first_q)):
                raise ValueError("first_q must equal quantizer-0 ids of full")

    def __len__(self) -> int:
        return len(self.first_q)


@dataclass(frozen=True)
class HiddenChunk:
    vectors: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vectors, dtype=np.float64)
        if v.ndim != 2:
            raise ShapeError(f"hidden chunk must be 2-D, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("hidden chunk has non-finite entries")
        object.__setattr__(self, "vectors", v)

    def __len__(self) -> int:
        return self.vectors.shape[0]


class HistoryDepth(str, enum.Enum):
    NONE = "none"
    ONE = "one"
    FULL = "full"


def refine_input(history: HiddenChunk | list[HiddenChunk] | None, h_cur: HiddenChunk,
                 depth: HistoryDepth | str) -> np.ndarray:
    """Decoder input rows for the current step.

    ``history`` is the previous chunk (or the list of all previous chunks, oldest
    first). ``one`` stacks ``[h_prev; h_cur]``; ``full`` stacks every previous
    chunk before ``h_cur``; ``none`` ignores history.
    """
    depth = HistoryDepth(depth)
    if history is None or depth is HistoryDepth.NONE:
        return h_cur.vectors
    past = [history] if isinstance(history, HiddenChunk) else list(history)
    if not past:
        return h_cur.vectors
    if depth is HistoryDepth.ONE:
        past = past[-1:]
    return np.concatenate([h.vectors for h in past] + [h_cur.vectors], axis=0)


def _orthonormal_basis() -> np.ndarray:
    n = np.arange(FRAME_SAMPLES)
    cols = []
    for k in range(1, D_LATENT // 2 + 1):
        w = 2 * np.pi * (50.0 * k) * n / SAMPLE_RATE
        cols.append(np.cos(w))
        cols.append(np.sin(w))
    b = np.stack(cols, axis=1)
    return b / np.linalg.norm(b, axis=0)


class MockCodec:
    """Seeded projection + residual vector quantizer."""

    def __init__(self, seed: int = 0, stage_decay: float = 0.85):
        rng = np.random.default_rng(seed)
        q, r = np.linalg.qr(rng.normal(size=(D_LATENT, D_LATENT)))
        rotation = q * np.sign(np.diag(r))
        self.seed = seed
        self.projection = _orthonormal_basis() @ rotation  # (640, 32), orthonormal columns
        # typical latent coordinate for a 0.1-RMS synthetic voice is ~0.5
        scales = 0.5 * stage_decay ** np.arange(N_QUANTIZERS)
        self.codebooks = rng.normal(size=(N_QUANTIZERS, CODEBOOK_SIZE, D_LATENT)) * scales[:, None, None]
        self._sq_norms = np.sum(self.codebooks ** 2, axis=2)
        self.projection.setflags(write=False)
        self.codebooks.setflags(write=False)

    # -- latents ---------------------------------------------------------
    def frames(self, samples: np.ndarray) -> np.ndarray:
        samples = np.asarray(samples, dtype=np.float64)
        if samples.ndim != 1 or samples.shape[0] % FRAME_SAMPLES != 0:
            raise LengthError(
                f"codec input must be a multiple of {FRAME_SAMPLES} samples, got {samples.shape}"
            )
        return samples.reshape(-1, FRAME_SAMPLES)

    def project(self, samples: np.ndarray) -> np.ndarray:
        """Pre-quantization latents, one row per 40 ms frame."""
        return self.frames(samples) @ self.projection

    def quantize(self, latents: np.ndarray) -> np.ndarray:
        """Greedy RVQ: (n_frames, 32) latents -> (n_frames, 32) integer ids."""
        residual = np.array(latents, dtype=np.float64)
        ids = np.empty((residual.shape[0], N_QUANTIZERS), dtype=np.int64)
        for s in range(N_QUANTIZERS):
            book = self.codebooks[s]
            d = self._sq_norms[s][None, :] - 2.0 * residual @ book.T
            idx = np.argmin(d, axis=1)
            ids[:, s] = idx
            residual -= book[idx]
        return ids

    def dequantize(self, ids: np.ndarray) -> np.ndarray:
        ids = np.asarray(ids)
        out = np.zeros((ids.shape[0], D_LATENT))
        for s in range(ids.shape[1]):
            out += self.codebooks[s][ids[:, s]]
        return out

    # -- chunk level -----------------------------------------------------
    def encode(self, chunk: AudioChunk | np.ndarray) -> TokenChunk:
        samples = chunk.samples if isinstance(chunk, AudioChunk) else chunk
        ids = self.quantize(self.project(samples))
        stacks = tuple(CodecFrameTokens(tuple(int(i) for i in row)) for row in ids)
        return TokenChunk(first_q=tuple(s.ids[0] for s in stacks), full=stacks)

    def synthesize(self, latents: np.ndarray) -> np.ndarray:
        return (np.asarray(latents) @ self.projection.T).reshape(-1)

    def decode(self, rows: np.ndarray, spec: ChunkSpec, step: int = 0) -> AudioChunk:
        """Emit audio for the last ``m`` rows; earlier rows only shape the onset.

        The most recent history frame is periodic over 40 ms, so replaying it
        gives a continuation across the boundary, crossfaded into the first
        10 ms of the current chunk.
        """
        rows = np.asarray(rows, dtype=np.float64)
        m = spec.codec_frames_per_chunk
        if rows.ndim != 2 or rows.shape[1] != D_LATENT:
            raise ShapeError(f"decoder input must be (k*{m}, {D_LATENT}), got {rows.shape}")
        if rows.shape[0] == 0 or rows.shape[0] % m != 0:
            raise ShapeError(f"decoder input rows {rows.shape[0]} not a multiple of {m}")
        audio = self.synthesize(rows[-m:])
        if rows.shape[0] > m:
            tail = self.synthesize(rows[-m - 1:-m])[:CROSSFADE_SAMPLES]
            w = 0.5 - 0.5 * np.cos(np.pi * (np.arange(CROSSFADE_SAMPLES) + 0.5) / CROSSFADE_SAMPLES)
            audio[:CROSSFADE_SAMPLES] = (1 - w) * tail + w * audio[:CROSSFADE_SAMPLES]
        return AudioChunk(samples=audio, step=step, n_valid=spec.samples_per_chunk)


_DEFAULT: dict[int, MockCodec] = {}


def default_codec(seed: int = 0) -> MockCodec:
    if seed not in _DEFAULT:
        _DEFAULT[seed] = MockCodec(seed)
    return _DEFAULT[seed]


def codec_encode(chunk: AudioChunk, codec: MockCodec | None = None) -> TokenChunk:
    return (codec or default_codec()).encode(chunk)


def codec_decode(rows: np.ndarray, spec: ChunkSpec, codec: MockCodec | None = None) -> AudioChunk:
    return (codec or default_codec()).decode(rows, spec)


def dump_tokens(tokens: TokenChunk) -> str:
    """Golden-file format: one line per frame, 32 space-separated ids."""
    if tokens.full is None:
        raise ValueError("token dump needs full stacks")
    return "".join(" ".join(str(i) for i in f.ids) + "\n" for f in tokens.full)


def parse_tokens(text: str) -> TokenChunk:
    stacks = tuple(CodecFrameTokens(tuple(int(x) for x in line.split()))
                   for line in text.splitlines() if line.strip())
    return TokenChunk(first_q=tuple(s.ids[0] for s in stacks), full=stacks)
