import numpy as np
import pytest
from hypothesis import given, strategies as st

import reference
from vlrefine.embed import hash_provider
from vlrefine.errors import EmptyChain, ShapeMismatch
from vlrefine.heads import vtg_loss, vtg_scores
from vlrefine.metrics import Segment
from vlrefine.planner import decompose
from vlrefine.refiner import (
    VARIANTS,
    RefinerConfig,
    RefinerParams,
    TokenGrid,
    joint_st_attention,
    refine,
    refine_steps,
    spatial_refine_step,
    temporal_refine_step,
)
from vlrefine.tensor import Tensor, finite_diff_check, parameter
from vlrefine.treebank import parse_tree


def unit(rng, c):
    v = rng.standard_normal(c)
    return v / np.linalg.norm(v)


def setup(rng, n_f=4, t=3, c=8, heads=2, joint=True, p=2):
    params = RefinerParams.init(c, heads, rng, joint=joint)
    grid = rng.standard_normal((n_f, t, c))
    pairs = [(unit(rng, c), unit(rng, c)) for _ in range(p)]
    return params, grid, pairs


@pytest.mark.parametrize("variant", VARIANTS)
def test_variants_match_reference(variant, rng):
    params, grid, pairs = setup(rng)
    got = refine(params, RefinerConfig(variant=variant, heads=2), grid, pairs).data
    want = reference.refine(reference.as_dict(params), variant, grid, pairs)
    np.testing.assert_allclose(got, want, atol=1e-12)
    assert got.shape == grid.shape


@given(st.integers(1, 3), st.integers(1, 3), st.integers(0, 3), st.sampled_from(VARIANTS))
def test_shape_preserved(n_f, t, p, variant):
    rng = np.random.default_rng(n_f * 100 + t * 10 + p)
    params, grid, pairs = setup(rng, n_f=n_f, t=t, c=4, heads=2, p=p)
    out = refine(params, RefinerConfig(variant=variant, heads=2), grid, pairs)
    assert out.tokens.shape == (n_f, t, 4)


def test_zero_steps_is_bit_exact_identity(rng):
    params, grid, _ = setup(rng)
    out = refine(params, RefinerConfig(), grid, [])
    assert out.data.tobytes() == grid.tobytes()


def test_empty_chain_error_mode(rng):
    params, grid, _ = setup(rng)
    with pytest.raises(EmptyChain):
        refine(params, RefinerConfig(empty_chain="error"), grid, [])


def test_identity_residual_with_zeroed_values(rng):
    params, grid, pairs = setup(rng, p=3)
    params.residual_w.data[...] = np.eye(8)
    for attn in (params.spatial_attn, params.temporal_attn):
        attn.w_v.data[...] = 0.0
        attn.w_o.data[...] = 0.0
    out = refine(params, RefinerConfig(), grid, pairs).data
    assert np.max(np.abs(out - grid)) <= 1e-12


def test_single_step_unrolled(rng):
    params, grid, pairs = setup(rng, p=1)
    n, v = pairs[0]
    hat = spatial_refine_step(params, TokenGrid(grid), n)
    tilde = temporal_refine_step(params, hat, v)
    want = grid @ params.residual_w.data + tilde.data
    np.testing.assert_allclose(refine(params, RefinerConfig(), grid, pairs).data, want, atol=1e-14)


def test_recurrence_differs_from_parallel(rng):
    params, grid, pairs = setup(rng)
    a = refine(params, RefinerConfig(variant="full"), grid, pairs).data
    b = refine(params, RefinerConfig(variant="parallel-avg"), grid, pairs).data
    assert not np.allclose(a, b)


def test_stage_order_trace(rng):
    params, grid, pairs = setup(rng, p=3)
    trace = []
    refine(params, RefinerConfig(), grid, pairs, trace=trace)
    assert trace == [(s, p) for p in (1, 2, 3) for s in ("spatial", "temporal")]


def test_smallest_grid_and_shapes(rng):
    params, grid, pairs = setup(rng, n_f=1, t=1)
    assert spatial_refine_step(params, grid, pairs[0][0]).tokens.shape == (1, 1, 8)
    assert temporal_refine_step(params, grid, pairs[0][1]).tokens.shape == (1, 1, 8)
    assert joint_st_attention(params, grid, *pairs[0]).tokens.shape == (1, 1, 8)


def test_zero_language_vector_still_occupies_slots(rng):
    params, grid, _ = setup(rng)
    with_zero = spatial_refine_step(params, grid, np.zeros(8)).data
    without = spatial_refine_step(params, grid, None, lang=False).data
    assert with_zero.shape == grid.shape
    assert not np.allclose(with_zero, without)


def test_identical_tokens_across_time(rng):
    params, _, pairs = setup(rng)
    grid = np.repeat(rng.standard_normal((4, 1, 8)), 3, axis=1)
    out = temporal_refine_step(params, grid, pairs[0][1]).data
    for t in (1, 2):
        np.testing.assert_array_equal(out[:, t], out[:, 0])


def test_lang_rows_single_mode(rng):
    params, grid, pairs = setup(rng)
    rep = refine(params, RefinerConfig(lang_rows="replicated"), grid, pairs).data
    one = refine(params, RefinerConfig(lang_rows="single"), grid, pairs).data
    assert rep.shape == one.shape and not np.allclose(rep, one)


def test_parameter_count_independent_of_steps(rng):
    params, grid, pairs = setup(rng, p=4, joint=False)
    before = [p.data.copy() for p in params.parameters()]
    for k in range(5):
        refine(params, RefinerConfig(max_steps=k), grid, pairs)
    assert len(params.parameters()) == 9
    for a, p in zip(before, params.parameters()):
        np.testing.assert_array_equal(a, p.data)


def test_max_steps_truncates(rng):
    params, grid, pairs = setup(rng, p=3)
    a = refine(params, RefinerConfig(max_steps=2), grid, pairs).data
    b = refine(params, RefinerConfig(), grid, pairs[:2]).data
    np.testing.assert_array_equal(a, b)


def test_refine_steps_returns_every_state(rng):
    params, grid, pairs = setup(rng, p=3)
    states = refine_steps(params, RefinerConfig(), grid, pairs)
    assert len(states) == 4
    np.testing.assert_array_equal(states[-1].data, refine(params, RefinerConfig(), grid, pairs).data)


def test_attention_weights_not_aliased(rng):
    params, _, _ = setup(rng)
    with pytest.raises(ValueError):
        RefinerParams(params.spatial_attn, params.spatial_attn, params.residual_w)


def test_chain_with_provider(rng):
    params, grid, _ = setup(rng, c=8)
    chain = decompose(parse_tree("(S (NP (NN dog)) (VP (VP (VBZ runs)) (CC and) (VP (VBZ sits))))"))
    prov = hash_provider(8, 1)
    got = refine(params, RefinerConfig(), grid, chain, prov).data
    pairs = [(prov.vector("dog"), prov.vector("runs")), (prov.vector("dog"), prov.vector("sits"))]
    np.testing.assert_array_equal(got, refine(params, RefinerConfig(), grid, pairs).data)
    with pytest.raises(ShapeMismatch):
        refine(params, RefinerConfig(), grid, chain, hash_provider(4))
    with pytest.raises(ValueError):
        refine(params, RefinerConfig(), grid, chain)


def test_shape_mismatches(rng):
    params, grid, pairs = setup(rng)
    with pytest.raises(ShapeMismatch):
        refine(params, RefinerConfig(), rng.standard_normal((2, 2, 4)), pairs)
    with pytest.raises(ShapeMismatch):
        refine(params, RefinerConfig(), grid, [(np.ones(3), np.ones(3))])
    with pytest.raises(ShapeMismatch):
        TokenGrid(np.ones((2, 3)))


def test_config_validation():
    with pytest.raises(ValueError):
        RefinerConfig(variant="bogus")
    with pytest.raises(ValueError):
        RefinerConfig(lang_rows="many")


@pytest.mark.parametrize("variant", ["full", "joint", "parallel-sum"])
def test_gradient_through_refine_and_vtg_loss(variant, rng):
    params, grid, pairs = setup(rng)
    q = unit(rng, 8)
    cands = [Segment(0, 1), Segment(0, 2), Segment(1, 3)]
    labels = [0.0, 0.5, 1.0]
    g = parameter(grid)
    cfg = RefinerConfig(variant=variant, heads=2)

    def f(ts):
        return vtg_loss(vtg_scores(refine(params, cfg, ts[0], pairs), q, cands), labels)

    assert finite_diff_check(f, [g, *params.parameters()]) < 1e-4


def test_layer_norm_option_gradient(rng):
    params, grid, pairs = setup(rng, joint=False)
    q = unit(rng, 8)
    cfg = RefinerConfig(layer_norm=True, heads=2)
    cands = [Segment(0, 2), Segment(1, 3)]
    f = lambda ts: vtg_loss(vtg_scores(refine(params, cfg, Tensor(grid), pairs), q, cands), [1.0, 0.0])
    assert finite_diff_check(f, params.parameters()) < 1e-4
