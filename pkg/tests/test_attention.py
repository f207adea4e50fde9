import numpy as np
import pytest

from fpan import tensor as T
from fpan.attention import (AttentionBlock, AttentionBranch, attention_map,
                            encode_query, query_cascade_plan)
from fpan.errors import ShapeError

from oracles import depthwise_loop, maxpool_loop, fd_gradient, rel_err


def t64(arr, grad=False):
    return T.Tensor(np.asarray(arr, dtype=np.float64), requires_grad=grad)


def dw(w, stride=1, padding="same"):
    return T.ConvKernel(t64(w), stride=stride, padding=padding, depthwise=True)


def make_block(rng, c, kinds=("dw3", "dw3x2", "dw5", "pool2"), qsize=4):
    branches = []
    for kind in kinds:
        ctx = []
        if kind == "dw3":
            ctx = [dw(rng.standard_normal((3, 3, c)))]
        elif kind == "dw3x2":
            ctx = [dw(rng.standard_normal((3, 3, c))), dw(rng.standard_normal((3, 3, c)))]
        elif kind == "dw5":
            ctx = [dw(rng.standard_normal((5, 5, c)))]
        mid = max(c // 2, 1)
        branches.append(AttentionBranch(
            kind=kind, context=ctx,
            head_reduce=T.ConvKernel(t64(rng.standard_normal((1, 1, c, mid))),
                                     t64(rng.standard_normal(mid))),
            head_project=T.ConvKernel(t64(rng.standard_normal((1, 1, mid, 1))),
                                      t64(rng.standard_normal(1)))))
    cascade = [dw(rng.standard_normal((kh, kw, c)), stride=s, padding="valid")
               for kh, kw, s in query_cascade_plan(qsize, qsize)]
    fusion = T.ConvKernel(t64(rng.standard_normal((3, 3, len(kinds), 1))),
                          t64(rng.standard_normal(1)))
    return AttentionBlock(branches=branches, fusion=fusion, query_encoder=cascade)


def test_cascade_plan_shrinks_to_one():
    assert query_cascade_plan(14, 14) == [(3, 3, 2), (3, 3, 2), (2, 2, 1)]
    assert query_cascade_plan(4, 4) == [(3, 3, 2), (1, 1, 1)]
    assert query_cascade_plan(3, 3) == [(3, 3, 1)]
    assert query_cascade_plan(1, 1) == [(1, 1, 1)]
    assert query_cascade_plan(7, 2) == [(3, 2, 2), (3, 1, 1)]
    with pytest.raises(ShapeError):
        query_cascade_plan(0, 4)


def test_cascade_plan_output_really_is_1x1():
    rng = np.random.default_rng(31)
    for h in (1, 2, 3, 4, 5, 7, 9, 14, 28):
        for w in (1, 3, 6, 14):
            c = 2
            cascade = [dw(rng.standard_normal((kh, kw, c)), stride=s, padding="valid")
                       for kh, kw, s in query_cascade_plan(h, w)]
            q = encode_query(t64(rng.standard_normal((h, w, c))), cascade)
            assert q.shape == (1, 1, c)


def test_encode_query_all_ones_gives_product_of_kernel_sums():
    c = 3
    plan = query_cascade_plan(4, 4)
    cascade = [dw(np.ones((kh, kw, c)), stride=s, padding="valid") for kh, kw, s in plan]
    q = encode_query(t64(np.ones((4, 4, c))), cascade)
    expect = 1.0
    for kh, kw, s in plan:
        expect *= kh * kw
    assert np.allclose(q.data, expect)


def test_branch_context_matches_oracles():
    rng = np.random.default_rng(32)
    c = 3
    f = rng.standard_normal((6, 6, c))
    block = make_block(rng, c)
    for br in block.branches:
        got = br.local_context(t64(f)).data
        assert got.shape == f.shape  # stride-1 same everywhere
        if br.kind == "pool2":
            assert rel_err(got, maxpool_loop(f, size=2, stride=1)) < 1e-12
        else:
            ref = f
            for k in br.context:
                ref = depthwise_loop(ref, k.weights.data, stride=1)
            assert rel_err(got, ref) < 1e-9


def test_attention_map_shape_and_range():
    rng = np.random.default_rng(33)
    c = 4
    block = make_block(rng, c, qsize=4)
    f = t64(rng.standard_normal((5, 5, c)))
    fq = t64(rng.standard_normal((4, 4, c)))
    att = attention_map(f, fq, block)
    assert att.shape == (5, 5, 1)
    # unit-scale random weights can saturate the sigmoid in float, so only
    # the closed range is checked here; strict interior is covered by the
    # network tests where weights are Xavier-sized
    assert np.all(att.data >= 0) and np.all(att.data <= 1)
    assert att.data.std() > 0


def test_single_branch_block_works():
    rng = np.random.default_rng(34)
    c = 4
    block = make_block(rng, c, kinds=("dw3",), qsize=4)
    att = attention_map(t64(rng.standard_normal((5, 5, c))),
                        t64(rng.standard_normal((4, 4, c))), block)
    assert att.shape == (5, 5, 1)


def test_constant_features_give_constant_map():
    # with spatially constant features every branch sees the same window
    # everywhere except at borders, so use 1x1-safe check via pool/conv on
    # a one-pixel map where constancy is trivial
    rng = np.random.default_rng(35)
    c = 2
    block = make_block(rng, c, qsize=1)
    f = t64(np.full((1, 1, c), 0.7))
    fq = t64(np.full((1, 1, c), -0.2))
    att = attention_map(f, fq, block)
    assert att.shape == (1, 1, 1)


def test_channel_mismatch_raises():
    rng = np.random.default_rng(36)
    block = make_block(rng, 4, qsize=4)
    with pytest.raises(ShapeError):
        attention_map(t64(rng.standard_normal((5, 5, 4))),
                      t64(rng.standard_normal((4, 4, 3))), block)


def test_attention_block_gradients():
    rng = np.random.default_rng(37)
    c = 2
    block = make_block(rng, c, qsize=3)
    f0 = rng.standard_normal((4, 4, c))
    q0 = rng.standard_normal((3, 3, c))
    r = rng.standard_normal((4, 4, 1))

    def loss(f, fq):
        return T.tsum(T.mul(attention_map(f, fq, block), T.Tensor(r)))

    ft, qt = t64(f0, True), t64(q0, True)
    loss(ft, qt).backward()
    ff = fd_gradient(lambda a: loss(t64(a), t64(q0)).item(), f0)
    fq = fd_gradient(lambda a: loss(t64(f0), t64(a)).item(), q0)
    assert rel_err(ft.grad, ff) < 1e-6
    assert rel_err(qt.grad, fq) < 1e-6

    # and through one branch weight
    w = block.branches[0].context[0].weights
    w.requires_grad = True
    w.grad = None
    loss(t64(f0), t64(q0)).backward()
    fw = fd_gradient(
        lambda a: loss_with_weight(block, a, f0, q0, r), w.data.copy())
    assert rel_err(w.grad, fw) < 1e-6


def loss_with_weight(block, wdata, f0, q0, r):
    keep = block.branches[0].context[0].weights.data
    block.branches[0].context[0].weights.data = np.asarray(wdata, dtype=np.float64)
    try:
        out = T.tsum(T.mul(attention_map(
            T.Tensor(np.asarray(f0, dtype=np.float64)),
            T.Tensor(np.asarray(q0, dtype=np.float64)), block), T.Tensor(r))).item()
    finally:
        block.branches[0].context[0].weights.data = keep
    return out
