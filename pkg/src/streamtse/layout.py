"""Interleaved input layouts for the semantic (SELM) and acoustic (ARLM) LMs.

A layout is a list of positions. Every element occupies one position; an
ARLM token chunk is stored as ``m`` token-embedding positions. The grammars,
with ``m`` frames per chunk and ``t`` steps, are::

    selm / interleaved   Ref^n Sep (Mix^m Task Tok^m)^t
    arlm / interleaved   Ref^n Sep (Mix^m TokEmb^m)^t
    arlm / sequential    Ref^n Sep Mix^(m t) TokEmb^(m t)
    arlm / ref_only      Ref^n Sep TokEmb^(m t)

with step tags 0 on the prefix and k on every element of chunk k.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyReference, LayoutError, StepOrderError
from .nn.layers import AttentionMask


class Kind(str, enum.Enum):
    REF = "ref"
    SEP = "sep"
    MIX = "mix"
    TASK = "task"
    TOKEN = "tok"
    TOKEMB = "tokemb"


class Stage(str, enum.Enum):
    SELM = "selm"
    ARLM = "arlm"


class Strategy(str, enum.Enum):
    INTERLEAVED = "interleaved"
    SEQUENTIAL = "sequential"
    REF_ONLY = "ref_only"

    @classmethod
    def parse(cls, s: "str | Strategy") -> "Strategy":
        return cls(s.replace("-", "_")) if isinstance(s, str) else cls(s)


@dataclass(frozen=True)
class SequenceElement:
    kind: Kind
    step: int
    vector: np.ndarray | None = None
    token: int | None = None

    @property
    def signature(self) -> tuple[Kind, int]:
        return self.kind, self.step


@dataclass
class Layout:
    stage: Stage
    strategy: Strategy
    m: int
    n_ref: int
    elements: list[SequenceElement] = field(default_factory=list)
    t: int = 0

    def __len__(self) -> int:
        return len(self.elements)

    def signature(self) -> list[tuple[Kind, int]]:
        return [e.signature for e in self.elements]

    def positions(self, kind: Kind, step: int | None = None) -> np.ndarray:
        return np.array([i for i, e in enumerate(self.elements)
                         if e.kind == kind and (step is None or e.step == step)], dtype=np.int64)

    def boundaries(self) -> dict[int, tuple[int, int]]:
        """Per step, the (first, last + 1) position span of that step's elements."""
        spans: dict[int, tuple[int, int]] = {}
        for i, e in enumerate(self.elements):
            lo, hi = spans.get(e.step, (i, i + 1))
            spans[e.step] = (min(lo, i), max(hi, i + 1))
        return spans

    def tokens(self, step: int) -> list[int]:
        kind = Kind.TOKEN if self.stage is Stage.SELM else Kind.TOKEMB
        return [e.token for e in self.elements if e.kind == kind and e.step == step]

    def copy(self) -> "Layout":
        return Layout(self.stage, self.strategy, self.m, self.n_ref, list(self.elements), self.t)


@dataclass(frozen=True)
class AppendDelta:
    appended: tuple[SequenceElement, ...]
    invalidate_from: int | None
    length_after: int

    @property
    def n_new(self) -> int:
        return len(self.appended)

    @property
    def forward_span(self) -> tuple[int, int]:
        """Positions that must be run through the model after this delta."""
        start = self.invalidate_from if self.invalidate_from is not None else self.length_after - self.n_new
        return start, self.length_after

    @property
    def recomputed(self) -> int:
        """Positions forwarded from the invalidation point (0 for pure appends)."""
        if self.invalidate_from is None:
            return 0
        return self.length_after - self.invalidate_from


def _frames(x) -> np.ndarray:
    return np.asarray(getattr(x, "frames", x), dtype=np.float64)


def build_prefix(e_ref, stage: Stage | str, m: int,
                 strategy: Strategy | str = Strategy.INTERLEAVED) -> Layout:
    stage, strategy = Stage(stage), Strategy.parse(strategy)
    if stage is Stage.SELM and strategy is not Strategy.INTERLEAVED:
        raise ValueError("the SELM layout is always interleaved")
    frames = _frames(e_ref)
    if frames.ndim != 2 or frames.shape[0] == 0:
        raise EmptyReference("reference embedding has no frames")
    elements = [SequenceElement(Kind.REF, 0, vector=row) for row in frames]
    elements.append(SequenceElement(Kind.SEP, 0))
    return Layout(stage, strategy, m, frames.shape[0], elements)


def _check_step(layout: Layout, step: int, n_frames: int | None) -> None:
    if step != layout.t + 1:
        raise StepOrderError(f"expected step {layout.t + 1}, got {step}")
    if n_frames is not None and n_frames != layout.m:
        raise LayoutError(f"chunk has {n_frames} frames, layout expects {layout.m}")


def _token_ids(tokens) -> list[int]:
    ids = getattr(tokens, "first_q", tokens)
    return [int(i) for i in ids]


def append_selm_step(layout: Layout, c, tokens, step: int | None = None) -> AppendDelta:
    """Append ``[Mix^m, Task, Tok^m]`` for the next step."""
    if layout.stage is not Stage.SELM:
        raise LayoutError("append_selm_step needs a SELM layout")
    step = getattr(c, "step", None) if step is None else step
    frames = _frames(c)
    ids = _token_ids(tokens)
    _check_step(layout, step, frames.shape[0])
    if len(ids) != layout.m:
        raise LayoutError(f"{len(ids)} tokens for a {layout.m}-frame chunk")
    new = [SequenceElement(Kind.MIX, step, vector=row) for row in frames]
    new.append(SequenceElement(Kind.TASK, step))
    new += [SequenceElement(Kind.TOKEN, step, token=i) for i in ids]
    layout.elements.extend(new)
    layout.t = step
    return AppendDelta(tuple(new), None, len(layout))


def append_arlm_step(layout: Layout, c, tokens, step: int | None = None) -> AppendDelta:
    """Add step ``t`` to an ARLM layout according to its strategy.

    The sequential strategy inserts the new mixture block in front of all
    token positions, so the cache is invalid from the insertion point on.
    """
    if layout.stage is not Stage.ARLM:
        raise LayoutError("append_arlm_step needs an ARLM layout")
    step = getattr(c, "step", None) if step is None else step
    ids = _token_ids(tokens)
    frames = None if c is None or layout.strategy is Strategy.REF_ONLY else _frames(c)
    _check_step(layout, step, None if frames is None else frames.shape[0])
    if len(ids) != layout.m:
        raise LayoutError(f"{len(ids)} tokens for a {layout.m}-frame chunk")
    toks = [SequenceElement(Kind.TOKEMB, step, token=i) for i in ids]
    strategy = layout.strategy
    if strategy is Strategy.REF_ONLY:
        new, invalidate = toks, None
        layout.elements.extend(toks)
    else:
        if frames is None:
            raise LayoutError(f"{strategy.value} strategy needs mixture frames")
        mix = [SequenceElement(Kind.MIX, step, vector=row) for row in frames]
        new = mix + toks
        if strategy is Strategy.INTERLEAVED:
            invalidate = None
            layout.elements.extend(new)
        else:
            invalidate = layout.n_ref + 1 + (step - 1) * layout.m
            layout.elements[invalidate:invalidate] = mix
            layout.elements.extend(toks)
    layout.t = step
    return AppendDelta(tuple(new), invalidate, len(layout))


def layout_length(t: int, n_ref: int, m: int, stage: Stage | str,
                  strategy: Strategy | str = Strategy.INTERLEAVED) -> int:
    """Closed-form position count of a layout after ``t`` steps."""
    if min(t, n_ref, m) < 0:
        raise ValueError("layout_length arguments must be non-negative")
    stage, strategy = Stage(stage), Strategy.parse(strategy)
    prefix = n_ref + 1
    if stage is Stage.SELM:
        if strategy is not Strategy.INTERLEAVED:
            raise ValueError("the SELM layout is always interleaved")
        return prefix + t * (2 * m + 1)
    if strategy is Strategy.REF_ONLY:
        return prefix + t * m
    return prefix + t * 2 * m


def step_cost(t: int, m: int, stage: Stage | str,
              strategy: Strategy | str = Strategy.INTERLEAVED) -> tuple[int, int]:
    """Closed-form (appended, recomputed) positions at step ``t``."""
    stage, strategy = Stage(stage), Strategy.parse(strategy)
    if stage is Stage.SELM:
        return 2 * m + 1, 0
    if strategy is Strategy.REF_ONLY:
        return m, 0
    if strategy is Strategy.INTERLEAVED:
        return 2 * m, 0
    return 2 * m, m + t * m


def expected_signature(t: int, n_ref: int, m: int, stage: Stage | str,
                       strategy: Strategy | str) -> list[tuple[Kind, int]]:
    stage, strategy = Stage(stage), Strategy.parse(strategy)
    sig = [(Kind.REF, 0)] * n_ref + [(Kind.SEP, 0)]
    steps = range(1, t + 1)
    if stage is Stage.SELM:
        if strategy is not Strategy.INTERLEAVED:
            raise LayoutError("the SELM layout is always interleaved")
        for k in steps:
            sig += [(Kind.MIX, k)] * m + [(Kind.TASK, k)] + [(Kind.TOKEN, k)] * m
    elif strategy is Strategy.INTERLEAVED:
        for k in steps:
            sig += [(Kind.MIX, k)] * m + [(Kind.TOKEMB, k)] * m
    elif strategy is Strategy.SEQUENTIAL:
        sig += [(Kind.MIX, k) for k in steps for _ in range(m)]
        sig += [(Kind.TOKEMB, k) for k in steps for _ in range(m)]
    else:
        sig += [(Kind.TOKEMB, k) for k in steps for _ in range(m)]
    return sig


def validate_layout(layout: Layout, d_model: int | None = None, vocab: int | None = None) -> None:
    """Raise LayoutError unless ``layout`` is a sentence of its grammar."""
    n = len(layout)
    per_step = layout_length(1, 0, layout.m, layout.stage, layout.strategy) - 1
    body = n - (layout.n_ref + 1)
    if layout.n_ref < 1 or body < 0 or (per_step and body % per_step):
        raise LayoutError(f"length {n} is not reachable for n_ref={layout.n_ref}, m={layout.m}")
    t = body // per_step if per_step else 0
    if t != layout.t:
        raise LayoutError(f"layout holds {t} steps but records t={layout.t}")
    want = expected_signature(t, layout.n_ref, layout.m, layout.stage, layout.strategy)
    got = layout.signature()
    if got != want:
        i = next(i for i, (a, b) in enumerate(zip(got, want)) if a != b)
        raise LayoutError(f"position {i}: found {got[i][0].value}@{got[i][1]}, "
                          f"grammar requires {want[i][0].value}@{want[i][1]}")
    for i, e in enumerate(layout.elements):
        if e.kind in (Kind.REF, Kind.MIX):
            if e.vector is None or (d_model is not None and np.shape(e.vector) != (d_model,)):
                raise LayoutError(f"position {i}: {e.kind.value} needs a length-{d_model} vector")
        elif e.kind in (Kind.TOKEN, Kind.TOKEMB):
            if e.token is None or e.token < 0 or (vocab is not None and e.token >= vocab):
                raise LayoutError(f"position {i}: invalid token {e.token}")


def is_valid_layout(layout: Layout, **kw) -> bool:
    try:
        validate_layout(layout, **kw)
    except LayoutError:
        return False
    return True


def causal_mask_for(layout: Layout) -> AttentionMask:
    return AttentionMask.causal(len(layout))


def conditioning_set(layout: Layout, pos: int) -> dict[Kind, set[int]]:
    """Steps of each element kind visible from ``pos`` under the causal mask."""
    row = causal_mask_for(layout).allowed[pos]
    seen: dict[Kind, set[int]] = {}
    for j in np.flatnonzero(row):
        e = layout.elements[j]
        seen.setdefault(e.kind, set()).add(e.step)
    return seen


def dump_layout(layout: Layout) -> str:
    """Debug dump: one line per position, ``index tag step``."""
    return "".join(f"{i} {e.kind.value} {e.step}\n" for i, e in enumerate(layout.elements))
