"""Named parameter sets and the checkpoint file format.

Checkpoint format (version 1): a numpy ``.npz`` archive holding one array per
parameter name plus ``__meta__``, a 0-d unicode array with a JSON object
``{"format": "streamtse-params", "version": 1, "seed": int, "config": {...}}``.
Arrays are float64 and keep their in-memory shapes.
"""

from __future__ import annotations

import json
from collections.abc import Iterator, Mapping
from pathlib import Path

import numpy as np

from .autograd import Tensor

CHECKPOINT_FORMAT = "streamtse-params"
CHECKPOINT_VERSION = 1
INIT_RANGE = 0.05


class ParamSet(Mapping):
    """Ordered name -> float64 array map with deterministic initialisation."""

    def __init__(self, seed: int = 0, tensors: dict[str, np.ndarray] | None = None):
        self.seed = seed
        self._tensors: dict[str, np.ndarray] = {}
        self._rng = np.random.default_rng(seed)
        for name, value in (tensors or {}).items():
            self.add(name, value)

    def __getitem__(self, name: str) -> np.ndarray:
        return self._tensors[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self._tensors)

    def __len__(self) -> int:
        return len(self._tensors)

    def add(self, name: str, value: np.ndarray) -> np.ndarray:
        if name in self._tensors:
            raise KeyError(f"duplicate parameter name {name!r}")
        self._tensors[name] = np.array(value, dtype=np.float64)
        return self._tensors[name]

    def uniform(self, name: str, *shape: int) -> np.ndarray:
        return self.add(name, self._rng.uniform(-INIT_RANGE, INIT_RANGE, shape))

    def constant(self, name: str, value: float, *shape: int) -> np.ndarray:
        return self.add(name, np.full(shape, value, dtype=np.float64))

    def copy(self) -> "ParamSet":
        return ParamSet(self.seed, {k: v.copy() for k, v in self._tensors.items()})

    def as_tensors(self, requires_grad: bool = False) -> dict[str, Tensor]:
        return {k: Tensor(v, requires_grad=requires_grad) for k, v in self._tensors.items()}

    def n_scalars(self) -> int:
        return sum(v.size for v in self._tensors.values())


def save_checkpoint(path: str | Path, params: ParamSet, config: dict | None = None) -> None:
    meta = {"format": CHECKPOINT_FORMAT, "version": CHECKPOINT_VERSION,
            "seed": params.seed, "config": config or {}}
    arrays = {name: params[name] for name in params}
    if "__meta__" in arrays:
        raise KeyError("'__meta__' is reserved")
    with open(path, "wb") as fh:
        np.savez(fh, __meta__=np.array(json.dumps(meta)), **arrays)


def load_checkpoint(path: str | Path) -> tuple[ParamSet, dict]:
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(str(data["__meta__"]))
        if meta.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"{path}: not a {CHECKPOINT_FORMAT} checkpoint")
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {meta.get('version')}")
        tensors = {k: data[k] for k in data.files if k != "__meta__"}
    return ParamSet(meta["seed"], tensors), meta["config"]
