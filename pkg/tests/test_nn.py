import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from streamtse.errors import ShapeError
from streamtse.nn import (
    AttentionMask,
    ParamSet,
    attention_forward,
    causal_conv1d,
    finite_difference_grad,
    grad,
    load_checkpoint,
    max_relative_error,
    no_grad,
    save_checkpoint,
    sinusoidal_positions,
    transformer_block_forward,
)
from streamtse.nn import autograd as ag
from streamtse.nn.layers import init_block


def naive_attention(q, k, v, allowed):
    out = np.zeros((q.shape[0], v.shape[1]))
    for i in range(q.shape[0]):
        idx = np.flatnonzero(allowed[i])
        s = np.array([q[i] @ k[j] for j in idx]) / np.sqrt(q.shape[1])
        w = np.exp(s - s.max())
        w /= w.sum()
        out[i] = sum(wj * v[j] for wj, j in zip(w, idx))
    return out


def test_mask_shapes_and_window():
    m = AttentionMask.causal(4)
    assert m.allowed.tolist() == np.tril(np.ones((4, 4), bool)).tolist()
    o = AttentionMask.offset(2, 3)
    assert o.shape == (2, 5)
    assert o.allowed.tolist() == [[1, 1, 1, 1, 0], [1, 1, 1, 1, 1]]
    w = AttentionMask.causal(4, window=2)
    assert w.allowed.sum(axis=1).tolist() == [1, 2, 2, 2]


def test_attention_matches_naive_loop(rng):
    q, k, v = rng.normal(size=(5, 4)), rng.normal(size=(7, 4)), rng.normal(size=(7, 3))
    mask = AttentionMask.offset(5, 2)
    out = attention_forward(q, k, v, mask).data
    assert np.allclose(out, naive_attention(q, k, v, mask.allowed), atol=1e-12)


def test_attention_shape_errors(rng):
    with pytest.raises(ShapeError):
        attention_forward(rng.normal(size=(2, 4)), rng.normal(size=(3, 4)), rng.normal(size=(3, 2)),
                          AttentionMask.causal(2))


def test_sinusoidal_positions_values():
    pe = sinusoidal_positions(3, 2, 4)
    assert pe[0, 0] == pytest.approx(np.sin(3.0))
    assert pe[0, 1] == pytest.approx(np.cos(3.0))
    assert pe[1, 2] == pytest.approx(np.sin(4.0 / 100.0))
    assert np.array_equal(sinusoidal_positions(0, 5, 4)[3:], sinusoidal_positions(3, 2, 4))


def _block_params(d=8, seed=0):
    ps = ParamSet(seed)
    init_block(ps, "b", d, 2)
    return ps.as_tensors()


def test_block_is_causal(rng):
    p = _block_params()
    x = rng.normal(size=(6, 8))
    y = x.copy()
    y[4:] += rng.normal(size=(2, 8))
    a = transformer_block_forward(x, p, "b", AttentionMask.causal(6))[0].data
    b = transformer_block_forward(y, p, "b", AttentionMask.causal(6))[0].data
    assert np.array_equal(a[:4], b[:4])
    assert not np.allclose(a[4:], b[4:])


@pytest.mark.parametrize("heads", [1, 2])
def test_block_cache_matches_full_forward(rng, heads):
    p = _block_params()
    x = rng.normal(size=(7, 8))
    full = transformer_block_forward(x, p, "b", AttentionMask.causal(7), heads)[0].data
    keys, values, rows = np.zeros((0, 8)), np.zeros((0, 8)), []
    for lo, hi in [(0, 3), (3, 4), (4, 7)]:
        out, (k, v) = transformer_block_forward(x[lo:hi], p, "b", AttentionMask.offset(hi - lo, lo),
                                                heads, (keys, values))
        keys, values = np.vstack([keys, k]), np.vstack([values, v])
        rows.append(out.data)
    assert np.allclose(np.vstack(rows), full, atol=1e-12)


def test_conv_matches_numpy_convolve(rng):
    x, kern = rng.normal(size=(9, 3)), rng.normal(size=(3, 3))
    y, _ = causal_conv1d(x, kern)
    for c in range(3):
        # y[i] = sum_j kern[j] x[i - 2 + j], a full convolution with the flipped kernel
        ref = np.convolve(x[:, c], kern[::-1, c])[:9]
        assert np.allclose(y.data[:, c], ref, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 4), st.integers(2, 12), st.integers(0, 2**31 - 1))
def test_conv_streaming_equals_offline(width, n, seed):
    r = np.random.default_rng(seed)
    x, kern, bias = r.normal(size=(n, 2)), r.normal(size=(width, 2)), r.normal(size=2)
    full, _ = causal_conv1d(x, kern, bias)
    cut = int(r.integers(1, n)) if n > 1 else 1
    a, state = causal_conv1d(x[:cut], kern, bias)
    b, _ = causal_conv1d(x[cut:], kern, bias, state)
    assert np.array_equal(np.vstack([a.data, b.data]), full.data)


def test_conv_shape_errors(rng):
    with pytest.raises(ShapeError):
        causal_conv1d(rng.normal(size=(3, 4)), rng.normal(size=(3, 2)))


PRIMITIVES = {
    "matmul": lambda p: ag.total(ag.matmul(p["a"], p["b"])),
    "gelu": lambda p: ag.total(ag.mul(ag.gelu(p["a"]), p["a"])),
    "layer_norm": lambda p: ag.total(ag.mul(ag.layer_norm(p["a"], p["g"], p["c"]), p["a"])),
    "attention": lambda p: ag.total(ag.mul(ag.masked_attention(p["a"], p["a"], p["a"],
                                                               np.tril(np.ones((4, 4), bool)))[0], p["a"])),
    "conv": lambda p: ag.total(ag.mul(ag.causal_conv(p["a"], p["k"], p["c"], np.ones((2, 3))), p["a"])),
    "cross_entropy": lambda p: ag.cross_entropy(ag.matmul(p["a"], p["b"]), [0, 2, 1, 0]),
    "mse": lambda p: ag.mse(ag.matmul(p["a"], p["b"]), np.ones((4, 3))),
    "rows": lambda p: ag.total(ag.mul(ag.take_rows(ag.concat_rows([p["a"], p["a"]]), [0, 5, 5, 2]), p["a"])),
    "cols": lambda p: ag.total(ag.mul(ag.concat_cols([ag.slice_cols(p["a"], 0, 2), ag.slice_cols(p["a"], 2, 3)]),
                                      p["a"])),
    "mean_neg": lambda p: ag.mean(ag.neg(ag.mul(p["a"], ag.row_vector(p["c"])))),
}


@pytest.mark.parametrize("name", sorted(PRIMITIVES))
def test_primitive_gradients(name, rng):
    params = {"a": rng.normal(size=(4, 3)), "b": rng.normal(size=(3, 3)), "g": rng.normal(size=3),
              "c": rng.normal(size=3), "k": rng.normal(size=(3, 3))}
    fn = PRIMITIVES[name]
    assert max_relative_error(grad(fn, params), finite_difference_grad(fn, params, 1e-5)) < 1e-6


def test_no_grad_builds_no_graph():
    a = ag.Tensor(np.ones((2, 2)), requires_grad=True)
    with no_grad():
        b = ag.matmul(a, a)
    assert not b.requires_grad and b._parents == ()
    assert ag.matmul(a, a).requires_grad


def test_backward_needs_scalar():
    with pytest.raises(ShapeError):
        ag.Tensor(np.ones((2, 2)), requires_grad=True).backward()


def test_max_relative_error_ignores_unsampled():
    a = {"w": np.array([1.0, 2.0, 3.0])}
    n = {"w": np.array([1.0, np.nan, 3.3])}
    assert max_relative_error(a, n) == pytest.approx(0.3 / 3.3)


def test_paramset_is_read_only_and_seeded():
    a, b = ParamSet(3), ParamSet(3)
    a.uniform("w", 2, 2)
    b.uniform("w", 2, 2)
    assert np.array_equal(a["w"], b["w"]) and np.abs(a["w"]).max() <= 0.05
    with pytest.raises(TypeError):
        a["w"] = np.zeros(2)
    with pytest.raises(KeyError):
        a.add("w", np.zeros(1))


def test_checkpoint_round_trip(tmp_path):
    ps = ParamSet(9)
    ps.uniform("x.w", 3, 2)
    ps.constant("x.g", 1.0, 2)
    save_checkpoint(tmp_path / "c.npz", ps, {"d_model": 2})
    back, cfg = load_checkpoint(tmp_path / "c.npz")
    assert cfg == {"d_model": 2} and back.seed == 9
    assert list(back) == list(ps)
    assert all(np.array_equal(back[k], ps[k]) for k in ps)


def test_checkpoint_rejects_foreign_npz(tmp_path):
    np.savez(tmp_path / "x.npz", __meta__=np.array('{"format": "other"}'))
    with pytest.raises(ValueError):
        load_checkpoint(tmp_path / "x.npz")
