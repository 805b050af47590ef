"""Parameters and forward passes of the encoder + SELM + ARLM stack."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import NULL_TOKEN, VOCAB_SIZE, ModelConfig
from .encoder import init_encoder
from .errors import RangeError, ShapeError
from .layout import Kind, SequenceElement
from .nn import autograd as ag
from .nn.layers import (
    AttentionMask,
    init_block,
    init_linear,
    init_norm,
    layer_norm,
    linear,
    sinusoidal_positions,
    transformer_block_forward,
)
from .nn.params import ParamSet, load_checkpoint, save_checkpoint


def init_params(cfg: ModelConfig, seed: int = 0) -> ParamSet:
    ps = ParamSet(seed)
    init_encoder(ps, cfg)
    d = cfg.d_model
    for lm, n_layers in (("selm", cfg.selm_layers), ("arlm", cfg.arlm_layers)):
        ps.uniform(f"{lm}.sep", d)
        if lm == "selm":
            ps.uniform(f"{lm}.task", d)
        ps.uniform(f"{lm}.tok_emb", VOCAB_SIZE, d)
        for i in range(n_layers):
            init_block(ps, f"{lm}.layer{i}", d, cfg.ffn_mult)
        init_norm(ps, f"{lm}.ln_out", d)
    init_linear(ps, "selm.head", d, VOCAB_SIZE)
    ps["selm.head.b"][NULL_TOKEN] = cfg.null_bias
    init_linear(ps, "arlm.proj", d, cfg.d_latent)
    return ps


class Models:
    """Immutable parameters plus config, shared read-only by sessions."""

    def __init__(self, cfg: ModelConfig, params: ParamSet):
        self.cfg = cfg
        self.params = params
        self._tensors = params.as_tensors()

    @classmethod
    def create(cls, cfg: ModelConfig | None = None, seed: int = 0) -> "Models":
        cfg = cfg or ModelConfig()
        return cls(cfg, init_params(cfg, seed))

    @property
    def tensors(self) -> dict[str, ag.Tensor]:
        return self._tensors

    def refresh(self) -> None:
        """Rebuild the constant tensor view after the trainer mutates parameters."""
        self._tensors = self.params.as_tensors()

    def save(self, path) -> None:
        save_checkpoint(path, self.params, self.cfg.to_dict())

    @classmethod
    def load(cls, path) -> "Models":
        params, cfg = load_checkpoint(path)
        return cls(ModelConfig.from_dict(cfg), params)


# ---------------------------------------------------------------------------
# KV cache


@dataclass
class KVCache:
    """Per-layer keys/values for the first ``L`` layout positions."""

    keys: list[np.ndarray] = field(default_factory=list)
    values: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def empty(cls, n_layers: int, d: int) -> "KVCache":
        return cls([np.zeros((0, d)) for _ in range(n_layers)],
                   [np.zeros((0, d)) for _ in range(n_layers)])

    @property
    def L(self) -> int:
        return self.keys[0].shape[0] if self.keys else 0

    def layer(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        return self.keys[i], self.values[i]

    def append(self, i: int, k: np.ndarray, v: np.ndarray) -> None:
        self.keys[i] = np.concatenate([self.keys[i], k])
        self.values[i] = np.concatenate([self.values[i], v])

    def truncate(self, p: int) -> int:
        """Drop positions >= p; returns how many were dropped."""
        if not 0 <= p <= self.L:
            raise RangeError(f"invalidate position {p} outside [0, {self.L}]")
        dropped = self.L - p
        self.keys = [k[:p] for k in self.keys]
        self.values = [v[:p] for v in self.values]
        return dropped


# ---------------------------------------------------------------------------
# LM forward


def embed_elements(elements: list[SequenceElement], p: dict, lm: str,
                   sources: dict[Kind, ag.Tensor] | None = None,
                   counters: dict[Kind, int] | None = None) -> ag.Tensor:
    """Input rows for a run of layout positions.

    Ref/mix vectors come from the elements' payloads, or, when ``sources``
    maps the kind to a matrix, from its rows in order of appearance (training
    feeds encoder outputs this way so gradients reach the encoder).
    """
    counters = {} if counters is None else counters
    pieces: list[ag.Tensor] = []
    i, n = 0, len(elements)
    while i < n:
        kind = elements[i].kind
        j = i
        while j < n and elements[j].kind == kind:
            j += 1
        run = elements[i:j]
        if kind in (Kind.REF, Kind.MIX):
            if sources is not None and kind in sources:
                start = counters.get(kind, 0)
                pieces.append(ag.take_rows(sources[kind], np.arange(start, start + len(run))))
                counters[kind] = start + len(run)
            else:
                pieces.append(ag.Tensor(np.stack([e.vector for e in run])))
        elif kind is Kind.SEP:
            pieces += [ag.row_vector(p[f"{lm}.sep"])] * len(run)
        elif kind is Kind.TASK:
            pieces += [ag.row_vector(p[f"{lm}.task"])] * len(run)
        else:
            pieces.append(ag.take_rows(p[f"{lm}.tok_emb"], [e.token for e in run]))
        i = j
    return ag.concat_rows(pieces)


def lm_forward(x: ag.Tensor, p: dict, lm: str, cfg: ModelConfig, start: int = 0,
               cache: KVCache | None = None) -> ag.Tensor:
    """Run rows at positions ``start..`` through an LM stack; returns final-norm states.

    With a cache, ``start`` must equal ``cache.L``; the new keys/values are
    appended to it.
    """
    n_layers = cfg.selm_layers if lm == "selm" else cfg.arlm_layers
    n = x.shape[0]
    if cache is not None and cache.L != start:
        raise ShapeError(f"cache holds {cache.L} positions but forward starts at {start}")
    if cache is None and start != 0:
        raise ShapeError("a forward without cache must start at position 0")
    x = ag.add(x, sinusoidal_positions(start, n, cfg.d_model))
    mask = AttentionMask.offset(n, start)
    for i in range(n_layers):
        past = cache.layer(i) if cache is not None else None
        x, (k, v) = transformer_block_forward(x, p, f"{lm}.layer{i}", mask, cfg.n_heads, past)
        if cache is not None:
            cache.append(i, k, v)
    return layer_norm(x, p, f"{lm}.ln_out")


def selm_logits(h: ag.Tensor, p: dict) -> ag.Tensor:
    return linear(h, p, "selm.head")


def arlm_latents(h: ag.Tensor, p: dict) -> ag.Tensor:
    return linear(h, p, "arlm.proj")


def selm_predict_positions(layout) -> np.ndarray:
    """Positions whose output predicts a SELM target token: the task token and
    every target token but the last of each chunk."""
    out = []
    for i, e in enumerate(layout.elements):
        if e.kind is Kind.TASK:
            out.extend(range(i, i + layout.m))
    return np.array(out, dtype=np.int64)
