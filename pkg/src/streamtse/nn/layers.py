"""Transformer and convolution building blocks on top of the autograd tape."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ShapeError
from . import autograd as ag
from .autograd import Tensor
from .params import ParamSet


@dataclass(frozen=True)
class AttentionMask:
    allowed: np.ndarray

    @classmethod
    def causal(cls, n: int, window: int | None = None) -> "AttentionMask":
        return cls.offset(n, 0, window)

    @classmethod
    def offset(cls, n_new: int, n_past: int, window: int | None = None) -> "AttentionMask":
        """Queries at positions n_past..n_past+n_new-1 over keys 0..n_past+n_new-1."""
        qpos = n_past + np.arange(n_new)[:, None]
        kpos = np.arange(n_past + n_new)[None, :]
        allowed = kpos <= qpos
        if window is not None:
            allowed &= qpos - kpos < window
        return cls(allowed)

    @property
    def shape(self):
        return self.allowed.shape


def attention_forward(q, k, v, mask: AttentionMask) -> Tensor:
    out, _ = ag.masked_attention(q, k, v, mask.allowed)
    return out


def attention_weights(q, k, mask: AttentionMask) -> np.ndarray:
    q, k = ag.as_tensor(q), ag.as_tensor(k)
    with ag.no_grad():
        _, p = ag.masked_attention(q, k, np.zeros((k.shape[0], 1)), mask.allowed)
    return p


def sinusoidal_positions(start: int, n: int, d: int) -> np.ndarray:
    """Absolute sinusoidal encodings for positions start..start+n-1."""
    pos = np.arange(start, start + n, dtype=np.float64)[:, None]
    i = np.arange(d)[None, :]
    rates = 1.0 / 10000.0 ** ((i - i % 2) / d)
    ang = pos * rates
    return np.where(i % 2 == 0, np.sin(ang), np.cos(ang))


def linear(x, p: dict, name: str) -> Tensor:
    return ag.add(ag.matmul(x, p[f"{name}.w"]), p[f"{name}.b"])


def layer_norm(x, p: dict, name: str) -> Tensor:
    return ag.layer_norm(x, p[f"{name}.g"], p[f"{name}.b"])


def init_linear(ps: ParamSet, name: str, d_in: int, d_out: int) -> None:
    ps.uniform(f"{name}.w", d_in, d_out)
    ps.uniform(f"{name}.b", d_out)


def init_norm(ps: ParamSet, name: str, d: int) -> None:
    ps.constant(f"{name}.g", 1.0, d)
    ps.constant(f"{name}.b", 0.0, d)


def init_block(ps: ParamSet, prefix: str, d: int, ffn_mult: int = 4) -> None:
    init_norm(ps, f"{prefix}.ln1", d)
    for n in ("q", "k", "v", "o"):
        init_linear(ps, f"{prefix}.attn.{n}", d, d)
    init_norm(ps, f"{prefix}.ln2", d)
    init_linear(ps, f"{prefix}.ffn.in", d, ffn_mult * d)
    init_linear(ps, f"{prefix}.ffn.out", ffn_mult * d, d)


def self_attention(h, p: dict, prefix: str, mask: AttentionMask, n_heads: int,
                   past: tuple[np.ndarray, np.ndarray] | None = None):
    """Multi-head attention of new rows ``h`` over cached keys/values plus themselves.

    Returns the projected output and the new rows' (keys, values) for caching.
    """
    d = h.shape[1]
    if d % n_heads:
        raise ShapeError(f"d_model {d} not divisible by {n_heads} heads")
    q = linear(h, p, f"{prefix}.attn.q")
    k = linear(h, p, f"{prefix}.attn.k")
    v = linear(h, p, f"{prefix}.attn.v")
    k_all, v_all = k, v
    if past is not None and past[0].shape[0]:
        k_all = ag.concat_rows([Tensor(past[0]), k])
        v_all = ag.concat_rows([Tensor(past[1]), v])
    if mask.shape != (h.shape[0], k_all.shape[0]):
        raise ShapeError(f"mask {mask.shape} vs queries {h.shape[0]} keys {k_all.shape[0]}")
    if n_heads == 1:
        out = attention_forward(q, k_all, v_all, mask)
    else:
        hd = d // n_heads
        heads = [attention_forward(ag.slice_cols(q, i * hd, (i + 1) * hd),
                                   ag.slice_cols(k_all, i * hd, (i + 1) * hd),
                                   ag.slice_cols(v_all, i * hd, (i + 1) * hd), mask)
                 for i in range(n_heads)]
        out = ag.concat_cols(heads)
    return linear(out, p, f"{prefix}.attn.o"), (k.data, v.data)


def feed_forward(h, p: dict, prefix: str) -> Tensor:
    return linear(ag.gelu(linear(h, p, f"{prefix}.ffn.in")), p, f"{prefix}.ffn.out")


def transformer_block_forward(x, p: dict, prefix: str, mask: AttentionMask, n_heads: int = 1,
                              past: tuple[np.ndarray, np.ndarray] | None = None):
    """Pre-norm decoder block; returns (output rows, (new keys, new values))."""
    a, kv = self_attention(layer_norm(x, p, f"{prefix}.ln1"), p, prefix, mask, n_heads, past)
    x = ag.add(x, a)
    x = ag.add(x, feed_forward(layer_norm(x, p, f"{prefix}.ln2"), p, prefix))
    return x, kv


def causal_conv1d(x, kernel, bias=None, state: np.ndarray | None = None):
    """Depthwise causal convolution with carried state.

    ``state`` is the previous w-1 input rows (zeros at stream start). Returns
    the output and the state to carry into the next call.
    """
    x, kernel = ag.as_tensor(x), ag.as_tensor(kernel)
    if kernel.data.ndim != 2 or kernel.shape[0] < 1:
        raise ShapeError(f"kernel must be (w >= 1, d), got {kernel.shape}")
    w, d = kernel.shape
    if x.data.ndim != 2 or x.shape[1] != d:
        raise ShapeError(f"input {x.shape} does not match kernel width {d}")
    if bias is None:
        bias = np.zeros(d)
    if state is None:
        state = np.zeros((w - 1, d))
    y = ag.causal_conv(x, kernel, bias, state)
    new_state = np.concatenate([state, x.data], axis=0)[x.shape[0]:] if w > 1 else state
    return y, new_state
