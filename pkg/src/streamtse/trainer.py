"""Teacher-forced end-to-end training with the hybrid NLL + regression loss."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .audio import ChunkSpec, MelConfig, SynthScene, chunk_waveform, log_mel_offline, synth_scene
from .codec import MockCodec, TokenChunk, default_codec
from .encoder import MixChunkEmbedding, encoder_forward
from .errors import ShapeError
from .layout import Kind, Layout, Stage, Strategy, append_arlm_step, append_selm_step, build_prefix
from .model import Models, arlm_latents, embed_elements, lm_forward, selm_logits
from .nn import autograd as ag

IGNORE_INDEX = -1


@dataclass(frozen=True)
class LossBreakdown:
    nll: float
    reg: float
    total: float
    lambda1: float
    lambda2: float

    @classmethod
    def of(cls, nll: float, reg: float, lambda1: float, lambda2: float) -> "LossBreakdown":
        nll, reg = float(nll), float(reg)
        return cls(nll, reg, lambda1 * nll + lambda2 * reg, lambda1, lambda2)

    def to_dict(self) -> dict:
        return {"nll": self.nll, "reg": self.reg, "total": self.total}


def hybrid_loss_tensors(selm_logits, gt_tokens, arlm_latents, gt_latents,
                        lambda1: float = 1.0, lambda2: float = 1.0, latent_mask=None):
    """Differentiable (total, nll, reg).

    ``gt_tokens`` has one entry per logit row; rows marked IGNORE_INDEX (prefix,
    separator, mixture frames) are left out of the cross-entropy. ``latent_mask``
    selects the latent rows that enter the mean squared error.
    """
    logits = ag.as_tensor(selm_logits)
    gt_tokens = np.asarray(gt_tokens, dtype=np.int64)
    if gt_tokens.shape != (logits.shape[0],):
        raise ShapeError(f"{gt_tokens.shape[0]} targets for {logits.shape[0]} logit rows")
    keep = np.flatnonzero(gt_tokens != IGNORE_INDEX)
    nll = ag.cross_entropy(ag.take_rows(logits, keep), gt_tokens[keep])
    lat = ag.as_tensor(arlm_latents)
    gt_latents = np.asarray(gt_latents, dtype=np.float64)
    if gt_latents.shape != lat.shape:
        raise ShapeError(f"latent shapes {lat.shape} vs {gt_latents.shape}")
    if latent_mask is not None:
        rows = np.flatnonzero(np.asarray(latent_mask, dtype=bool))
        lat, gt_latents = ag.take_rows(lat, rows), gt_latents[rows]
    reg = ag.mse(lat, gt_latents)
    total = ag.add(ag.mul(nll, lambda1), ag.mul(reg, lambda2))
    return total, nll, reg


def hybrid_loss(selm_logits, gt_tokens, arlm_latents, gt_latents, lambda1: float = 1.0,
                lambda2: float = 1.0, latent_mask=None) -> LossBreakdown:
    with ag.no_grad():
        _, nll, reg = hybrid_loss_tensors(selm_logits, gt_tokens, arlm_latents, gt_latents,
                                          lambda1, lambda2, latent_mask)
    return LossBreakdown.of(nll.data, reg.data, lambda1, lambda2)


# ---------------------------------------------------------------------------
# data


@dataclass(frozen=True)
class TrainingItem:
    scene: SynthScene
    mix_mel: np.ndarray
    ref_mel: np.ndarray
    tokens: tuple[TokenChunk, ...]
    latents: np.ndarray
    n_steps: int


@dataclass(frozen=True)
class TrainingBatch:
    spec: ChunkSpec
    items: tuple[TrainingItem, ...]


def _pad_to(x: np.ndarray, multiple: int) -> np.ndarray:
    r = x.shape[0] % multiple
    return x if r == 0 else np.concatenate([x, np.zeros(multiple - r)])


def make_training_batch(seed: int, spec: ChunkSpec, n_scenes: int = 1, duration_ms: int | None = None,
                        ref_ms: int = 1000, snr_db: float | tuple[float, float] = (0.0, 5.0),
                        codec: MockCodec | None = None, mel: MelConfig = MelConfig()) -> TrainingBatch:
    """Synthetic scenes with ground truth from the mock codec applied to the clean target."""
    if n_scenes < 1:
        raise ValueError("n_scenes must be at least 1")
    codec = codec or default_codec()
    duration_ms = duration_ms or 2 * spec.chunk_ms
    seeds = np.random.SeedSequence(seed).generate_state(n_scenes)
    items = []
    for s in seeds:
        rng = np.random.default_rng(int(s))
        snr = float(rng.uniform(*snr_db)) if isinstance(snr_db, tuple) else float(snr_db)
        scene = synth_scene(int(s), duration_ms, snr, ref_ms=ref_ms)
        mix_chunks = chunk_waveform(scene.mixture, spec)
        tgt_chunks = chunk_waveform(scene.target, spec)
        mix = np.concatenate([c.samples for c in mix_chunks])
        tgt = np.concatenate([c.samples for c in tgt_chunks])
        items.append(TrainingItem(
            scene=scene,
            mix_mel=log_mel_offline(mix, mel).frames,
            ref_mel=log_mel_offline(_pad_to(scene.reference.samples, mel.hop), mel).frames,
            tokens=tuple(codec.encode(c) for c in tgt_chunks),
            latents=codec.project(tgt),
            n_steps=len(mix_chunks),
        ))
    return TrainingBatch(spec, tuple(items))


# ---------------------------------------------------------------------------
# teacher-forced forward


def teacher_forced_layouts(e_ref: np.ndarray, e_mix: np.ndarray, tokens, m: int,
                           strategy: Strategy | str = Strategy.INTERLEAVED) -> tuple[Layout, Layout]:
    selm = build_prefix(e_ref, Stage.SELM, m)
    arlm = build_prefix(e_ref, Stage.ARLM, m, strategy)
    for k, tok in enumerate(tokens, start=1):
        c = MixChunkEmbedding(e_mix[(k - 1) * m:k * m], k)
        append_selm_step(selm, c, tok)
        append_arlm_step(arlm, c, tok)
    return selm, arlm


def scene_loss(p: dict, models: Models, item: TrainingItem, m: int, lambda1: float = 1.0,
               lambda2: float = 1.0, strategy: Strategy | str = Strategy.INTERLEAVED):
    """Differentiable (total, nll, reg) for one scene with ground-truth tokens in the u slots."""
    cfg = models.cfg
    e_ref, _ = encoder_forward(item.ref_mel, p, cfg)
    e_mix, _ = encoder_forward(item.mix_mel, p, cfg)
    selm, arlm = teacher_forced_layouts(e_ref.data, e_mix.data, item.tokens, m, strategy)
    sources = {Kind.REF: e_ref, Kind.MIX: e_mix}

    hs = lm_forward(embed_elements(selm.elements, p, "selm", sources), p, "selm", cfg)
    targets = np.full(len(selm), IGNORE_INDEX, dtype=np.int64)
    for i, e in enumerate(selm.elements):
        if e.kind is Kind.TOKEN:
            targets[i - 1] = e.token  # predicted from the preceding position
    logits = selm_logits(hs, p)

    ha = lm_forward(embed_elements(arlm.elements, p, "arlm", sources), p, "arlm", cfg)
    tok_pos = arlm.positions(Kind.TOKEMB)
    # token positions are step-major in every strategy, matching the latent rows
    lat = arlm_latents(ag.take_rows(ha, tok_pos), p)
    return hybrid_loss_tensors(logits, targets, lat, item.latents, lambda1, lambda2)


def batch_loss(p: dict, models: Models, batch: TrainingBatch, lambda1: float = 1.0,
               lambda2: float = 1.0, strategy: Strategy | str = Strategy.INTERLEAVED):
    m = batch.spec.codec_frames_per_chunk
    parts = [scene_loss(p, models, it, m, lambda1, lambda2, strategy) for it in batch.items]
    k = 1.0 / len(parts)
    total = ag.mul(ag.add_all([t for t, _, _ in parts]), k)
    nll = sum(float(n.data) for _, n, _ in parts) * k
    reg = sum(float(r.data) for _, _, r in parts) * k
    return total, nll, reg


def train_step(models: Models, batch: TrainingBatch, lr: float = 1e-2, lambda1: float = 1.0,
               lambda2: float = 1.0) -> LossBreakdown:
    """One plain gradient-descent update; returns the loss before the update."""
    params = models.params
    wrapped = {k: ag.Tensor(params[k], requires_grad=True) for k in params}
    total, nll, reg = batch_loss(wrapped, models, batch, lambda1, lambda2)
    total.backward()
    for k, t in wrapped.items():
        if t.grad is not None:
            arr = params[k]
            np.subtract(arr, lr * t.grad, out=arr)
    models.refresh()
    return LossBreakdown.of(nll, reg, lambda1, lambda2)


def train(models: Models, batch: TrainingBatch, steps: int, lr: float = 1e-2, lambda1: float = 1.0,
          lambda2: float = 1.0, log=None) -> list[LossBreakdown]:
    """Run ``steps`` updates; ``log`` (a text stream) receives one JSON line per step."""
    history = []
    for step in range(steps):
        lb = train_step(models, batch, lr, lambda1, lambda2)
        history.append(lb)
        if log is not None:
            log.write(json.dumps({"step": step, **lb.to_dict()}) + "\n")
    return history
