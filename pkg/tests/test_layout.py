import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from streamtse.errors import EmptyReference, LayoutError, StepOrderError
from streamtse.layout import (
    Kind,
    Stage,
    Strategy,
    append_arlm_step,
    append_selm_step,
    build_prefix,
    conditioning_set,
    dump_layout,
    is_valid_layout,
    layout_length,
    step_cost,
    validate_layout,
)

D = 4
CASES = [(Stage.SELM, Strategy.INTERLEAVED)] + [(Stage.ARLM, s) for s in Strategy]


def build(stage, strategy, n_ref, m, t, seed=0):
    r = np.random.default_rng(seed)
    lay = build_prefix(r.normal(size=(n_ref, D)), stage, m, strategy)
    deltas = []
    for k in range(1, t + 1):
        c, tok = r.normal(size=(m, D)), r.integers(0, 1024, m).tolist()
        app = append_selm_step if stage is Stage.SELM else append_arlm_step
        deltas.append(app(lay, c, tok, step=k))
    return lay, deltas


@settings(max_examples=150, deadline=None)
@given(st.sampled_from(CASES), st.integers(1, 6), st.integers(1, 6), st.integers(0, 6))
def test_builder_outputs_are_valid_and_sized(case, n_ref, m, t):
    stage, strategy = case
    lay, deltas = build(stage, strategy, n_ref, m, t)
    validate_layout(lay, d_model=D, vocab=1025)
    assert len(lay) == layout_length(t, n_ref, m, stage, strategy)
    for k, d in enumerate(deltas, start=1):
        appended, recomputed = step_cost(k, m, stage, strategy)
        assert (d.n_new, d.recomputed) == (appended, recomputed)


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 5), st.integers(1, 5), st.integers(1, 5))
def test_selm_interleaving_order(n_ref, m, t):
    lay, _ = build(Stage.SELM, Strategy.INTERLEAVED, n_ref, m, t)
    tags = [e.kind for e in lay.elements]
    assert tags[:n_ref + 1] == [Kind.REF] * n_ref + [Kind.SEP]
    block = [Kind.MIX] * m + [Kind.TASK] + [Kind.TOKEN] * m
    assert tags[n_ref + 1:] == block * t
    for k, (lo, hi) in lay.boundaries().items():
        if k:
            assert (lo, hi) == (n_ref + 1 + (k - 1) * (2 * m + 1), n_ref + 1 + k * (2 * m + 1))


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 5), st.integers(1, 5), st.integers(1, 5))
def test_token_conditioning_is_causal(n_ref, m, t):
    lay, _ = build(Stage.SELM, Strategy.INTERLEAVED, n_ref, m, t)
    for k in range(1, t + 1):
        first_tok = lay.positions(Kind.TOKEN, k)[0]
        seen = conditioning_set(lay, first_tok)
        assert seen[Kind.MIX] == set(range(1, k + 1))
        assert seen[Kind.TOKEN] == set(range(1, k + 1))  # includes itself
        assert seen[Kind.REF] == {0}
        assert lay.positions(Kind.MIX, k)[-1] < first_tok


def test_sequential_layout_and_insertion_points():
    lay, deltas = build(Stage.ARLM, Strategy.SEQUENTIAL, 3, 2, 3)
    tags = [(e.kind.value, e.step) for e in lay.elements]
    assert tags[:4] == [("ref", 0)] * 3 + [("sep", 0)]
    assert tags[4:10] == [("mix", 1)] * 2 + [("mix", 2)] * 2 + [("mix", 3)] * 2
    assert tags[10:] == [("tokemb", 1)] * 2 + [("tokemb", 2)] * 2 + [("tokemb", 3)] * 2
    # step t inserts at n_ref + 1 + (t - 1) m; everything after it is recomputed
    assert [d.invalidate_from for d in deltas] == [4, 6, 8]
    assert [d.recomputed for d in deltas] == [4, 6, 8]  # m + t m with m = 2


def test_ref_only_has_no_mixture_positions():
    lay, deltas = build(Stage.ARLM, Strategy.REF_ONLY, 2, 3, 4)
    assert len(lay.positions(Kind.MIX)) == 0
    assert all(d.invalidate_from is None for d in deltas)


def test_interleaved_never_invalidates():
    for stage, strategy in CASES[:2]:
        _, deltas = build(stage, strategy, 2, 3, 5)
        assert all(d.invalidate_from is None and d.recomputed == 0 for d in deltas)


def test_step_order_and_shape_errors(rng):
    lay = build_prefix(rng.normal(size=(2, D)), Stage.SELM, 2)
    with pytest.raises(StepOrderError):
        append_selm_step(lay, rng.normal(size=(2, D)), [1, 2], step=2)
    with pytest.raises(LayoutError):
        append_selm_step(lay, rng.normal(size=(3, D)), [1, 2], step=1)
    with pytest.raises(LayoutError):
        append_selm_step(lay, rng.normal(size=(2, D)), [1], step=1)
    with pytest.raises(LayoutError):
        append_arlm_step(lay, rng.normal(size=(2, D)), [1, 2], step=1)
    with pytest.raises(EmptyReference):
        build_prefix(np.zeros((0, D)), Stage.SELM, 2)
    with pytest.raises(ValueError):
        build_prefix(rng.normal(size=(2, D)), Stage.SELM, 2, Strategy.SEQUENTIAL)


def test_validator_rejects_targeted_mutations():
    lay, _ = build(Stage.SELM, Strategy.INTERLEAVED, 2, 2, 2)
    swapped = lay.copy()
    swapped.elements[3], swapped.elements[5] = swapped.elements[5], swapped.elements[3]
    dropped = lay.copy()
    del dropped.elements[4]
    duplicated = lay.copy()
    duplicated.elements.insert(4, duplicated.elements[4])
    wrong_t = lay.copy()
    wrong_t.t = 1
    for bad in (swapped, dropped, duplicated, wrong_t):
        assert not is_valid_layout(bad)
    with pytest.raises(LayoutError, match="vector"):
        validate_layout(lay, d_model=D + 1)
    with pytest.raises(LayoutError, match="token"):
        validate_layout(lay, vocab=1)


def test_strategy_parse_and_dump():
    assert Strategy.parse("ref-only") is Strategy.REF_ONLY
    lay, _ = build(Stage.ARLM, Strategy.INTERLEAVED, 1, 1, 1)
    assert dump_layout(lay) == "0 ref 0\n1 sep 0\n2 mix 1\n3 tokemb 1\n"


@pytest.mark.parametrize("t,m,expected", [(1, 14, 28), (3, 14, 56), (16, 50, 850), (4, 2, 10)])
def test_sequential_closed_form(t, m, expected):
    assert step_cost(t, m, "arlm", "sequential") == (2 * m, expected)
