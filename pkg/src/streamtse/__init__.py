"""Streaming target speaker extraction with chunk-wise interleaved LM layouts.

A desk-scale numpy build: causal log-mel frontend, mock RVQ codec, causal
encoder, SELM and ARLM decoders with append-only KV caches, a teacher-forced
trainer, and a measurement harness.
"""

from .audio import (
    AudioChunk,
    ChunkSpec,
    MelFrames,
    SynthScene,
    Waveform,
    chunk_waveform,
    log_mel,
    log_mel_offline,
    synth_scene,
    validate_chunk_spec,
)
from .bench import ISRReport, RTFReport, ablate_cost, bench_rtf, eval_isr, run_extraction, selftest
from .codec import HistoryDepth, MockCodec, codec_decode, codec_encode
from .config import NULL_TOKEN, VOCAB_SIZE, ModelConfig
from .engine import SessionConfig, close_session, open_session, process_chunk, run_session
from .errors import (
    EmptyReference,
    GranularityError,
    LayoutError,
    LengthError,
    RangeError,
    ShapeError,
    StepOrderError,
    StreamTSEError,
    WavFormatError,
)
from .layout import Kind, Layout, Stage, Strategy, validate_layout
from .model import KVCache, Models
from .trainer import LossBreakdown, hybrid_loss, make_training_batch, train, train_step

__all__ = [
    "AudioChunk",
    "ChunkSpec",
    "EmptyReference",
    "GranularityError",
    "HistoryDepth",
    "ISRReport",
    "KVCache",
    "Kind",
    "Layout",
    "LayoutError",
    "LengthError",
    "LossBreakdown",
    "MelFrames",
    "MockCodec",
    "ModelConfig",
    "Models",
    "NULL_TOKEN",
    "RTFReport",
    "RangeError",
    "SessionConfig",
    "ShapeError",
    "Stage",
    "StepOrderError",
    "Strategy",
    "StreamTSEError",
    "SynthScene",
    "VOCAB_SIZE",
    "WavFormatError",
    "Waveform",
    "ablate_cost",
    "bench_rtf",
    "chunk_waveform",
    "close_session",
    "codec_decode",
    "codec_encode",
    "eval_isr",
    "hybrid_loss",
    "log_mel",
    "log_mel_offline",
    "make_training_batch",
    "open_session",
    "process_chunk",
    "run_extraction",
    "run_session",
    "selftest",
    "synth_scene",
    "train",
    "train_step",
    "validate_chunk_spec",
    "validate_layout",
]

__version__ = "0.1.0"
