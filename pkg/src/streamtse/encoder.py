"""Weight-shared causal encoder for reference and mixture log-mel frames.

Each layer is pre-norm causal self-attention, a depthwise causal convolution
(width 3 by default) followed by a pointwise map, and a feed-forward block.
The same parameters (``encoder.*``) serve both the reference and the
mixture stream.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .audio import MelFrames
from .config import ModelConfig
from .errors import EmptyReference, ShapeError
from .nn import autograd as ag
from .nn.layers import (
    AttentionMask,
    causal_conv1d,
    feed_forward,
    init_block,
    init_linear,
    init_norm,
    layer_norm,
    linear,
    self_attention,
    sinusoidal_positions,
)
from .nn.params import ParamSet


@dataclass
class _LayerState:
    keys: np.ndarray
    values: np.ndarray
    conv: np.ndarray


@dataclass
class EncoderState:
    layers: list[_LayerState] = field(default_factory=list)
    n_frames: int = 0

    @classmethod
    def initial(cls, cfg: ModelConfig) -> "EncoderState":
        d = cfg.d_model
        return cls([_LayerState(np.zeros((0, d)), np.zeros((0, d)), np.zeros((cfg.conv_width - 1, d)))
                    for _ in range(cfg.enc_layers)], 0)


@dataclass(frozen=True)
class RefEmbedding:
    frames: np.ndarray

    def __len__(self):
        return self.frames.shape[0]


@dataclass(frozen=True)
class MixChunkEmbedding:
    frames: np.ndarray
    step: int

    def __len__(self):
        return self.frames.shape[0]


def init_encoder(ps: ParamSet, cfg: ModelConfig) -> None:
    d = cfg.d_model
    init_linear(ps, "encoder.in", cfg.n_mels, d)
    for i in range(cfg.enc_layers):
        pre = f"encoder.layer{i}"
        init_block(ps, pre, d, cfg.ffn_mult)
        init_norm(ps, f"{pre}.ln_conv", d)
        ps.uniform(f"{pre}.conv.kernel", cfg.conv_width, d)
        ps.uniform(f"{pre}.conv.bias", d)
        init_linear(ps, f"{pre}.conv.point", d, d)
    init_norm(ps, "encoder.ln_out", d)


def encoder_forward(mel, p: dict, cfg: ModelConfig, state: EncoderState | None = None):
    """Encode a block of mel frames causally, continuing from ``state``.

    ``mel`` may be an array or a Tensor; ``p`` maps names to Tensors. Returns
    (frames Tensor, new state). A fresh state gives the offline result.
    """
    mel = ag.as_tensor(mel)
    if mel.data.ndim != 2 or mel.shape[1] != cfg.n_mels:
        raise ShapeError(f"mel must be (n, {cfg.n_mels}), got {mel.shape}")
    state = state or EncoderState.initial(cfg)
    n = mel.shape[0]
    x = linear(ag.mul(ag.add(mel, -cfg.mel_center), 1.0 / cfg.mel_scale), p, "encoder.in")
    x = ag.add(x, sinusoidal_positions(state.n_frames, n, cfg.d_model))
    new_layers = []
    for i, ls in enumerate(state.layers):
        pre = f"encoder.layer{i}"
        mask = AttentionMask.offset(n, ls.keys.shape[0], cfg.enc_window)
        a, (k, v) = self_attention(layer_norm(x, p, f"{pre}.ln1"), p, pre, mask, cfg.n_heads,
                                   past=(ls.keys, ls.values))
        x = ag.add(x, a)
        c, conv_state = causal_conv1d(layer_norm(x, p, f"{pre}.ln_conv"), p[f"{pre}.conv.kernel"],
                                      p[f"{pre}.conv.bias"], ls.conv)
        x = ag.add(x, linear(ag.gelu(c), p, f"{pre}.conv.point"))
        x = ag.add(x, feed_forward(layer_norm(x, p, f"{pre}.ln2"), p, pre))
        keys = np.concatenate([ls.keys, k])
        values = np.concatenate([ls.values, v])
        if cfg.enc_window is not None:
            # the next query can see at most window - 1 earlier frames
            cut = max(0, keys.shape[0] - (cfg.enc_window - 1))
            keys, values = keys[cut:], values[cut:]
        new_layers.append(_LayerState(keys, values, conv_state))
    out = layer_norm(x, p, "encoder.ln_out")
    return out, EncoderState(new_layers, state.n_frames + n)


def encode_reference(mel: MelFrames, p: dict, cfg: ModelConfig) -> RefEmbedding:
    if len(mel) == 0:
        raise EmptyReference("reference produced no mel frames")
    with ag.no_grad():
        out, _ = encoder_forward(mel.frames, p, cfg)
    return RefEmbedding(out.data)


def encode_chunk(mel: MelFrames, state: EncoderState, p: dict, cfg: ModelConfig,
                 step: int, frames_per_chunk: int | None = None):
    if frames_per_chunk is not None and len(mel) != frames_per_chunk:
        raise ShapeError(f"chunk has {len(mel)} mel frames, expected {frames_per_chunk}")
    with ag.no_grad():
        out, state = encoder_forward(mel.frames, p, cfg, state)
    return MixChunkEmbedding(out.data, step), state
