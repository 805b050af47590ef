"""Analytic gradients through the tape, and a central-difference oracle."""

from __future__ import annotations

from collections.abc import Callable, Mapping

import numpy as np

from . import autograd as ag

LossFn = Callable[[dict[str, ag.Tensor]], ag.Tensor]


def grad(loss_fn: LossFn, params: Mapping[str, np.ndarray]) -> dict[str, np.ndarray]:
    """Gradient of the scalar ``loss_fn(params)`` for every parameter."""
    wrapped = {k: ag.Tensor(v, requires_grad=True) for k, v in params.items()}
    loss = ag.as_tensor(loss_fn(wrapped))
    if loss.requires_grad:
        loss.backward()
    return {k: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
            for k, t in wrapped.items()}


def loss_value(loss_fn: LossFn, params: Mapping[str, np.ndarray]) -> float:
    with ag.no_grad():
        return float(ag.as_tensor(loss_fn({k: ag.Tensor(v) for k, v in params.items()})).data)


def finite_difference_grad(loss_fn: LossFn, params: Mapping[str, np.ndarray], eps: float = 1e-4,
                           entries: Mapping[str, np.ndarray] | None = None) -> dict[str, np.ndarray]:
    """Central differences ``(f(p + eps) - f(p - eps)) / 2 eps`` per scalar.

    ``entries`` optionally restricts each tensor to a set of flat indices; the
    other positions are returned as NaN.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    work = {k: np.array(v, dtype=np.float64, copy=True) for k, v in params.items()}
    out = {}
    for name, arr in work.items():
        flat = arr.reshape(-1)
        g = np.full(flat.shape, np.nan) if entries is not None else np.zeros(flat.shape)
        idx = range(flat.size) if entries is None else entries.get(name, ())
        for i in idx:
            orig = flat[i]
            flat[i] = orig + eps
            up = loss_value(loss_fn, work)
            flat[i] = orig - eps
            down = loss_value(loss_fn, work)
            flat[i] = orig
            g[i] = (up - down) / (2 * eps)
        out[name] = g.reshape(arr.shape)
    return out


def max_relative_error(analytic: Mapping[str, np.ndarray], numeric: Mapping[str, np.ndarray],
                       floor: float = 1e-6) -> float:
    """Largest ``|a - n| / max(|a|, |n|, floor)`` over entries present in ``numeric``."""
    worst = 0.0
    for name, n in numeric.items():
        a = analytic[name]
        ok = ~np.isnan(n)
        if not ok.any():
            continue
        diff = np.abs(a[ok] - n[ok])
        scale = np.maximum(np.maximum(np.abs(a[ok]), np.abs(n[ok])), floor)
        worst = max(worst, float((diff / scale).max()))
    return worst
