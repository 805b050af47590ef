"""A small reverse-mode tape over 2-D numpy arrays.

Only the primitives the models need are provided, each with a hand-written
backward. Graph construction is skipped inside :func:`no_grad`, which is how
the streaming engine runs.
"""

from __future__ import annotations

import contextlib
import threading

import numpy as np

from ..errors import ShapeError

_state = threading.local()


def grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextlib.contextmanager
def no_grad():
    prev = grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def backward(self):
        if self.data.size != 1:
            raise ShapeError("backward() needs a scalar output")
        order, seen = [], set()

        def visit(t):
            stack = [(t, False)]
            while stack:
                node, done = stack.pop()
                if done:
                    order.append(node)
                    continue
                if id(node) in seen:
                    continue
                seen.add(id(node))
                stack.append((node, True))
                for p in node._parents:
                    if id(p) not in seen:
                        stack.append((p, False))

        visit(self)
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data, parents, backward) -> Tensor:
    out = Tensor(data)
    if grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _accum(t: Tensor, g: np.ndarray):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64, copy=True)
    else:
        t.grad += g


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(g, b.shape))

    return _result(a.data + b.data, (a, b), backward)


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _result(-a.data, (a,), lambda g: _accum(a, -g))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        _accum(a, _unbroadcast(g * b.data, a.shape))
        _accum(b, _unbroadcast(g * a.data, b.shape))

    return _result(a.data * b.data, (a, b), backward)


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(a) -> Tensor:
    """tanh approximation of GELU."""
    a = as_tensor(a)
    x = a.data
    inner = _GELU_C * (x + 0.044715 * x ** 3)
    th = np.tanh(inner)

    def backward(g):
        d = 0.5 * (1 + th) + 0.5 * x * (1 - th ** 2) * _GELU_C * (1 + 3 * 0.044715 * x ** 2)
        _accum(a, g * d)

    return _result(0.5 * x * (1 + th), (a,), backward)


def total(a) -> Tensor:
    a = as_tensor(a)
    return _result(np.array(a.data.sum()), (a,), lambda g: _accum(a, np.broadcast_to(g, a.shape)))


def mean(a) -> Tensor:
    a = as_tensor(a)
    n = a.data.size
    return _result(np.array(a.data.mean()), (a,),
                   lambda g: _accum(a, np.broadcast_to(g / n, a.shape)))


# ---------------------------------------------------------------------------
# linear algebra and indexing


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shapes {a.shape} @ {b.shape}")

    def backward(g):
        if a.requires_grad:
            _accum(a, g @ b.data.T)
        if b.requires_grad:
            _accum(b, a.data.T @ g)

    return _result(a.data @ b.data, (a, b), backward)


def concat_rows(parts) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    if len(parts) == 1:
        return parts[0]
    sizes = [p.shape[0] for p in parts]

    def backward(g):
        start = 0
        for p, n in zip(parts, sizes):
            _accum(p, g[start:start + n])
            start += n

    return _result(np.concatenate([p.data for p in parts], axis=0), parts, backward)


def concat_cols(parts) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    if len(parts) == 1:
        return parts[0]
    sizes = [p.shape[1] for p in parts]

    def backward(g):
        start = 0
        for p, n in zip(parts, sizes):
            _accum(p, g[:, start:start + n])
            start += n

    return _result(np.concatenate([p.data for p in parts], axis=1), parts, backward)


def take_rows(a, idx) -> Tensor:
    """Row gather (embedding lookup, position selection); backward scatter-adds."""
    a = as_tensor(a)
    idx = np.asarray(idx, dtype=np.int64)

    def backward(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            np.add.at(full, idx, g)
            _accum(a, full)

    return _result(a.data[idx], (a,), backward)


def slice_cols(a, start: int, stop: int) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            full[:, start:stop] = g
            _accum(a, full)

    return _result(a.data[:, start:stop], (a,), backward)


def row_vector(a) -> Tensor:
    """View a length-d parameter as a 1 x d matrix."""
    a = as_tensor(a)
    return _result(a.data.reshape(1, -1), (a,), lambda g: _accum(a, g.reshape(a.shape)))


# ---------------------------------------------------------------------------
# fused neural primitives


def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    mu = x.data.mean(axis=1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc ** 2).mean(axis=1, keepdims=True) + eps)
    xhat = xc * inv

    def backward(g):
        _accum(gamma, (g * xhat).sum(axis=0))
        _accum(beta, g.sum(axis=0))
        if x.requires_grad:
            dxhat = g * gamma.data
            dx = inv * (dxhat - dxhat.mean(axis=1, keepdims=True)
                        - xhat * (dxhat * xhat).mean(axis=1, keepdims=True))
            _accum(x, dx)

    return _result(xhat * gamma.data + beta.data, (x, gamma, beta), backward)


def masked_attention(q, k, v, allowed: np.ndarray) -> tuple[Tensor, np.ndarray]:
    """Scaled dot-product attention with a boolean (n_q, n_k) mask.

    Returns the output and the attention weights. Rows with no allowed key
    produce zero output.
    """
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    nq, d = q.shape
    nk = k.shape[0]
    if k.shape[1] != d or v.shape[0] != nk:
        raise ShapeError(f"attention shapes q{q.shape} k{k.shape} v{v.shape}")
    if allowed.shape != (nq, nk):
        raise ShapeError(f"mask shape {allowed.shape} != ({nq}, {nk})")
    scale = 1.0 / np.sqrt(d)
    scores = (q.data @ k.data.T) * scale
    scores = np.where(allowed, scores, -np.inf)
    row_max = scores.max(axis=1, keepdims=True)
    row_max = np.where(np.isfinite(row_max), row_max, 0.0)
    e = np.where(allowed, np.exp(scores - row_max), 0.0)
    denom = e.sum(axis=1, keepdims=True)
    p = e / np.where(denom > 0, denom, 1.0)

    def backward(g):
        if v.requires_grad:
            _accum(v, p.T @ g)
        dp = g @ v.data.T
        ds = p * (dp - (dp * p).sum(axis=1, keepdims=True)) * scale
        if q.requires_grad:
            _accum(q, ds @ k.data)
        if k.requires_grad:
            _accum(k, ds.T @ q.data)

    return _result(p @ v.data, (q, k, v), backward), p


def causal_conv(x, kernel, bias, carry: np.ndarray) -> Tensor:
    """Depthwise causal convolution along rows.

    ``kernel`` is (w, d); ``carry`` holds the w-1 input rows preceding ``x``.
    ``y[i] = sum_j kernel[j] * x[i - (w-1) + j] + bias``.
    """
    x, kernel, bias = as_tensor(x), as_tensor(kernel), as_tensor(bias)
    w, d = kernel.shape
    if x.shape[1] != d or carry.shape != (w - 1, d):
        raise ShapeError(f"conv shapes x{x.shape} kernel{kernel.shape} carry{carry.shape}")
    n = x.shape[0]
    padded = np.concatenate([carry, x.data], axis=0)
    out = np.zeros((n, d)) + bias.data
    for j in range(w):
        out = out + kernel.data[j] * padded[j:j + n]

    def backward(g):
        _accum(bias, g.sum(axis=0))
        if kernel.requires_grad:
            _accum(kernel, np.stack([(g * padded[j:j + n]).sum(axis=0) for j in range(w)]))
        if x.requires_grad:
            gp = np.zeros_like(padded)
            for j in range(w):
                gp[j:j + n] += g * kernel.data[j]
            _accum(x, gp[w - 1:])

    return _result(out, (x, kernel, bias), backward)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def cross_entropy(logits, targets) -> Tensor:
    """Mean softmax cross-entropy of (n, V) logits against n integer targets."""
    logits = as_tensor(logits)
    targets = np.asarray(targets, dtype=np.int64)
    n = targets.shape[0]
    if logits.shape[0] != n:
        raise ShapeError(f"{logits.shape[0]} logit rows vs {n} targets")
    if n == 0:
        return Tensor(0.0)
    lp = log_softmax(logits.data)
    loss = -lp[np.arange(n), targets].mean()

    def backward(g):
        p = np.exp(lp)
        p[np.arange(n), targets] -= 1.0
        _accum(logits, g * p / n)

    return _result(np.array(loss), (logits,), backward)


def mse(pred, target) -> Tensor:
    pred = as_tensor(pred)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"mse shapes {pred.shape} vs {target.shape}")
    if target.size == 0:
        return Tensor(0.0)
    diff = pred.data - target
    return _result(np.array((diff ** 2).mean()), (pred,),
                   lambda g: _accum(pred, g * 2.0 * diff / diff.size))


def add_all(parts) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    out = parts[0]
    for p in parts[1:]:
        out = add(out, p)
    return out
