"""Streaming extraction sessions backed by append-only KV caches.

One call to :func:`process_chunk` runs the whole per-chunk pipeline:

1. causal log-mel and encoder update for the new mixture chunk;
2. SELM: append the chunk frames and the task token, then decode ``m``
   semantic tokens greedily, appending each one;
3. ARLM: add the chunk frames and the decoded tokens according to the
   strategy, read the hidden states at the new token positions and project
   them to codec latents;
4. codec decode of the latents, conditioned on earlier chunks' latents.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .audio import (
    AudioChunk,
    ChunkSpec,
    FrontendState,
    MelConfig,
    Waveform,
    chunk_waveform,
    log_mel,
    log_mel_offline,
    validate_chunk_spec,
)
from .codec import HiddenChunk, HistoryDepth, MockCodec, TokenChunk, default_codec, refine_input
from .config import NULL_TOKEN
from .encoder import EncoderState, MixChunkEmbedding, RefEmbedding, encode_chunk, encode_reference, encoder_forward
from .errors import EmptyReference, ShapeError
from .layout import (
    AppendDelta,
    Kind,
    Layout,
    SequenceElement,
    Stage,
    Strategy,
    append_arlm_step,
    append_selm_step,
    build_prefix,
)
from .model import KVCache, Models, arlm_latents, embed_elements, lm_forward, selm_logits, selm_predict_positions
from .nn import autograd as ag


@dataclass(frozen=True)
class SessionConfig:
    chunk_ms: int = 560
    strategy: Strategy = Strategy.INTERLEAVED
    history: HistoryDepth = HistoryDepth.ONE
    mel: MelConfig = MelConfig()
    codec_seed: int = 0
    # fault injection: force the null token as the first token of this step
    fault_step: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "strategy", Strategy.parse(self.strategy))
        object.__setattr__(self, "history", HistoryDepth(self.history))


@dataclass
class StepCost:
    t: int
    selm_appended: int
    arlm_appended: int
    arlm_recomputed: int
    invalidated: bool
    valid: bool

    @property
    def appended(self) -> int:
        return self.selm_appended + self.arlm_appended

    @property
    def recomputed(self) -> int:
        return self.arlm_recomputed

    def to_dict(self) -> dict:
        return {"t": self.t, "appended": self.appended, "recomputed": self.recomputed,
                "valid": self.valid, "selm_appended": self.selm_appended,
                "arlm_appended": self.arlm_appended, "invalidated": self.invalidated}


@dataclass(frozen=True)
class StepOutput:
    tokens: TokenChunk
    hidden: HiddenChunk
    audio: AudioChunk
    valid: bool
    decoder_rows: int
    min_margin: float


@dataclass
class SessionReport:
    chunk_ms: int
    strategy: str
    history_depth: str
    steps: list[StepCost]
    valid_fraction: float

    def to_dict(self) -> dict:
        return {"chunk_ms": self.chunk_ms, "strategy": self.strategy,
                "history_depth": self.history_depth,
                "steps": [s.to_dict() for s in self.steps],
                "valid_fraction": self.valid_fraction}

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def cache_invalidate_from(cache: KVCache, p: int) -> int:
    """Truncate ``cache`` to ``p`` positions; returns the number dropped."""
    return cache.truncate(p)


@dataclass
class SessionState:
    config: SessionConfig
    spec: ChunkSpec
    models: Models
    codec: MockCodec
    e_ref: RefEmbedding
    selm_layout: Layout
    selm_cache: KVCache
    arlm_layout: Layout
    arlm_cache: KVCache
    encoder: EncoderState
    frontend: FrontendState
    history: list[HiddenChunk] = field(default_factory=list)
    t: int = 0
    emitted: list[np.ndarray] = field(default_factory=list)
    true_samples: int = 0
    ledger: list[StepCost] = field(default_factory=list)
    closed: bool = False

    @property
    def h_prev(self) -> HiddenChunk | None:
        return self.history[-1] if self.history else None

    @property
    def emitted_samples(self) -> int:
        return sum(a.shape[0] for a in self.emitted)


def open_session(config: SessionConfig, models: Models, reference: Waveform) -> SessionState:
    """Encode the reference once and prime both caches with the static prefix."""
    spec = validate_chunk_spec(config.chunk_ms)
    if len(reference) == 0:
        raise EmptyReference("reference waveform is empty")
    cfg, p = models.cfg, models.tensors
    # the reference is one block; pad it to whole mel hops
    hop = config.mel.hop
    ref = reference.samples
    if ref.shape[0] % hop:
        ref = np.concatenate([ref, np.zeros(hop - ref.shape[0] % hop)])
    e_ref = encode_reference(log_mel_offline(ref, config.mel), p, cfg)
    m = spec.codec_frames_per_chunk
    selm = build_prefix(e_ref, Stage.SELM, m)
    arlm = build_prefix(e_ref, Stage.ARLM, m, config.strategy)
    selm_cache = KVCache.empty(cfg.selm_layers, cfg.d_model)
    arlm_cache = KVCache.empty(cfg.arlm_layers, cfg.d_model)
    with ag.no_grad():
        lm_forward(embed_elements(selm.elements, p, "selm"), p, "selm", cfg, 0, selm_cache)
        lm_forward(embed_elements(arlm.elements, p, "arlm"), p, "arlm", cfg, 0, arlm_cache)
    return SessionState(
        config=config, spec=spec, models=models, codec=default_codec(config.codec_seed),
        e_ref=e_ref, selm_layout=selm, selm_cache=selm_cache, arlm_layout=arlm,
        arlm_cache=arlm_cache, encoder=EncoderState.initial(cfg),
        frontend=FrontendState.initial(config.mel),
    )


def _decode_selm(session: SessionState, c: MixChunkEmbedding, step: int):
    cfg, p = session.models.cfg, session.models.tensors
    cache, m = session.selm_cache, session.spec.codec_frames_per_chunk
    head = [SequenceElement(Kind.MIX, step, vector=row) for row in c.frames]
    head.append(SequenceElement(Kind.TASK, step))
    h = lm_forward(embed_elements(head, p, "selm"), p, "selm", cfg, cache.L, cache)
    logits = selm_logits(ag.take_rows(h, [h.shape[0] - 1]), p).data[0]
    tokens, valid, margin = [], True, np.inf
    for i in range(m):
        if session.config.fault_step == step and i == 0:
            tok = NULL_TOKEN
        elif not valid:
            tok = NULL_TOKEN
        else:
            top2 = np.partition(logits, -2)[-2:]
            margin = min(margin, float(top2[1] - top2[0]))
            tok = int(np.argmax(logits))
        if tok == NULL_TOKEN:
            valid = False
        tokens.append(tok)
        emb = embed_elements([SequenceElement(Kind.TOKEN, step, token=tok)], p, "selm")
        h = lm_forward(emb, p, "selm", cfg, cache.L, cache)
        if i + 1 < m:
            logits = selm_logits(h, p).data[0]
    return tokens, valid, margin


def process_chunk(session: SessionState, chunk: AudioChunk) -> StepOutput:
    if session.closed:
        raise RuntimeError("session is closed")
    spec, cfg, p = session.spec, session.models.cfg, session.models.tensors
    m = spec.codec_frames_per_chunk
    if chunk.samples.shape != (spec.samples_per_chunk,):
        raise ShapeError(f"chunk has {chunk.samples.shape[0]} samples, spec needs {spec.samples_per_chunk}")
    step = session.t + 1

    mel, session.frontend = log_mel(chunk, session.frontend, session.config.mel)
    c, session.encoder = encode_chunk(mel, session.encoder, p, cfg, step, m)

    selm_before, arlm_before = session.selm_cache.L, session.arlm_cache.L
    with ag.no_grad():
        tokens, valid, margin = _decode_selm(session, c, step)
        append_selm_step(session.selm_layout, c, tokens, step)
        if session.selm_cache.L != len(session.selm_layout):
            raise AssertionError("SELM cache out of sync with its layout")

        d_arlm: AppendDelta = append_arlm_step(session.arlm_layout, c, tokens, step)
        start, stop = d_arlm.forward_span
        if d_arlm.invalidate_from is not None:
            cache_invalidate_from(session.arlm_cache, d_arlm.invalidate_from)
        x = embed_elements(session.arlm_layout.elements[start:stop], p, "arlm")
        h = lm_forward(x, p, "arlm", cfg, start, session.arlm_cache)
        if session.arlm_cache.L != len(session.arlm_layout):
            raise AssertionError("ARLM cache out of sync with its layout")
        hidden = HiddenChunk(arlm_latents(ag.take_rows(h, np.arange(h.shape[0] - m, h.shape[0])), p).data)

    rows = refine_input(session.history, hidden, session.config.history)
    audio = session.codec.decode(rows, spec, step)
    if not valid:
        audio = AudioChunk(np.zeros(spec.samples_per_chunk), step, spec.samples_per_chunk)

    depth = session.config.history
    if depth is HistoryDepth.ONE:
        session.history = [hidden]
    elif depth is HistoryDepth.FULL:
        session.history.append(hidden)
    session.t = step
    session.emitted.append(audio.samples)
    session.true_samples += chunk.n_valid
    # measured from the caches: net growth, and rows forwarded after an invalidation
    invalidated = d_arlm.invalidate_from is not None
    session.ledger.append(StepCost(step, session.selm_cache.L - selm_before,
                                   session.arlm_cache.L - arlm_before,
                                   h.shape[0] if invalidated else 0, invalidated, valid))
    return StepOutput(TokenChunk(tuple(tokens)), hidden, audio, valid, rows.shape[0], margin)


def close_session(session: SessionState) -> tuple[Waveform, SessionReport]:
    session.closed = True
    audio = np.concatenate(session.emitted)[:session.true_samples] if session.emitted else np.zeros(0)
    n = len(session.ledger)
    report = SessionReport(
        chunk_ms=session.spec.chunk_ms, strategy=session.config.strategy.value,
        history_depth=session.config.history.value, steps=list(session.ledger),
        valid_fraction=(sum(s.valid for s in session.ledger) / n) if n else 1.0,
    )
    return Waveform(np.clip(audio, -1.0, 1.0)), report


def run_session(models: Models, config: SessionConfig, mixture: Waveform, reference: Waveform):
    """Stream a whole mixture; returns (step outputs, output waveform, report, final state)."""
    session = open_session(config, models, reference)
    outputs = [process_chunk(session, ch) for ch in chunk_waveform(mixture, session.spec)]
    wav, report = close_session(session)
    return outputs, wav, report, session


# ---------------------------------------------------------------------------
# offline oracle


@dataclass
class OfflineOutputs:
    selm_logits: np.ndarray
    selm_predictions: dict[int, list[int]]
    selm_margins: dict[int, float]
    arlm_latents: dict[int, np.ndarray]


def offline_reference_forward(models: Models, selm_layout: Layout, arlm_layout: Layout) -> OfflineOutputs:
    """One full forward per LM over complete layouts with a lower-triangular mask."""
    cfg, p = models.cfg, models.tensors
    m = selm_layout.m
    with ag.no_grad():
        hs = lm_forward(embed_elements(selm_layout.elements, p, "selm"), p, "selm", cfg)
        logits = selm_logits(hs, p).data
        ha = lm_forward(embed_elements(arlm_layout.elements, p, "arlm"), p, "arlm", cfg)
        lat = arlm_latents(ha, p).data
    preds, margins = {}, {}
    pos = selm_predict_positions(selm_layout)
    for k in range(1, selm_layout.t + 1):
        rows = logits[pos[(k - 1) * m:k * m]]
        preds[k] = [int(i) for i in rows.argmax(axis=1)]
        top2 = np.sort(rows, axis=1)[:, -2:]
        margins[k] = float((top2[:, 1] - top2[:, 0]).min())
    latents = {k: lat[arlm_layout.positions(Kind.TOKEMB, k)] for k in range(1, arlm_layout.t + 1)}
    return OfflineOutputs(logits, preds, margins, latents)


def offline_oracle(models: Models, config: SessionConfig, mixture: Waveform, reference: Waveform,
                   tokens: dict[int, list[int]]) -> OfflineOutputs:
    """Whole-utterance oracle: offline mel, offline encoder, layouts teacher-forced
    with ``tokens``, then :func:`offline_reference_forward`."""
    spec = validate_chunk_spec(config.chunk_ms)
    cfg, p = models.cfg, models.tensors
    chunks = chunk_waveform(mixture, spec)
    samples = np.concatenate([c.samples for c in chunks])
    hop = config.mel.hop
    ref = reference.samples
    if ref.shape[0] % hop:
        ref = np.concatenate([ref, np.zeros(hop - ref.shape[0] % hop)])
    with ag.no_grad():
        e_ref = encoder_forward(log_mel_offline(ref, config.mel).frames, p, cfg)[0].data
        e_mix = encoder_forward(log_mel_offline(samples, config.mel).frames, p, cfg)[0].data
    m = spec.codec_frames_per_chunk
    selm = build_prefix(e_ref, Stage.SELM, m)
    arlm = build_prefix(e_ref, Stage.ARLM, m, config.strategy)
    for k in range(1, len(chunks) + 1):
        c = MixChunkEmbedding(e_mix[(k - 1) * m:k * m], k)
        append_selm_step(selm, c, tokens[k])
        append_arlm_step(arlm, c, tokens[k])
    return offline_reference_forward(models, selm, arlm)
