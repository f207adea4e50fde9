import numpy as np
import pytest

from fpan import tensor as T
from fpan.boxes import BoundingBox
from fpan.errors import ShapeError
from fpan.upsampler import Upsampler, box_mass_fraction, extract_box, top_down_fuse

from oracles import best_component_box, rel_err


def t64(arr):
    return T.Tensor(np.asarray(arr, dtype=np.float64))


def kern(w, b=None, stride=2):
    return T.ConvKernel(t64(w), None if b is None else t64(b), stride=stride)


def test_two_level_hand_trace():
    # coarse 1x1 map, fine 2x2 map, all 2x2 stride-2 deconvs, 1x1 head.
    # every number below is recomputed by hand with plain numpy.
    m_fine = np.array([[0.2, 0.4], [0.6, 0.8]]).reshape(2, 2, 1)
    m_coarse = np.array([[0.5]]).reshape(1, 1, 1)
    w_top = np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(2, 2, 1, 1)
    b_top = np.array([0.1])
    w_bot = np.zeros((2, 2, 2, 1))
    w_bot[:, :, 0, 0] = [[0.5, 0.5], [0.5, 0.5]]   # reads the fine map
    w_bot[:, :, 1, 0] = [[1.0, -1.0], [-1.0, 1.0]]  # reads the carried estimate
    b_bot = np.array([-0.05])
    w_head = np.array([2.0, -1.0]).reshape(1, 1, 1, 2)
    b_head = np.array([0.3, 0.0])

    ups = Upsampler(stages=[[kern(w_top, b_top)], [kern(w_bot, b_bot)]],
                    head=T.ConvKernel(t64(w_head), t64(b_head), stride=1))
    fg, probs = top_down_fuse([t64(m_fine), t64(m_coarse)], ups, return_probs=True)

    # stage 0: the single coarse pixel paints the kernel, bias added, no squash
    carry = 0.5 * w_top[:, :, 0, 0] + 0.1
    # stage 1: each input pixel of [fine, carry] paints its 2x2 block
    est = np.zeros((4, 4))
    for y in range(2):
        for x in range(2):
            est[2 * y:2 * y + 2, 2 * x:2 * x + 2] = (
                m_fine[y, x, 0] * w_bot[:, :, 0, 0] + carry[y, x] * w_bot[:, :, 1, 0])
    est += b_bot[0]
    # head: two logits per pixel then softmax, channel 0 is foreground
    l0 = 2.0 * est + 0.3
    l1 = -1.0 * est + 0.0
    expect = np.exp(l0) / (np.exp(l0) + np.exp(l1))

    assert fg.shape == (4, 4, 1)
    assert rel_err(fg.data[:, :, 0], expect) < 1e-12
    assert np.abs(probs.data.sum(axis=2) - 1.0).max() < 1e-12


def test_three_level_squashes_middle_but_not_top():
    # zero maps + single-tap kernels isolate where the squashing happens:
    # the carried top output must stay linear, the middle one must be
    # squashed, and the last level must be a two-logit softmax
    def sig(v):
        return 1.0 / (1.0 + np.exp(-v))

    maps = [t64(np.zeros((4, 4, 1))), t64(np.zeros((2, 2, 1))), t64(np.zeros((1, 1, 1)))]
    w_mid = np.zeros((2, 2, 2, 1))
    w_mid[0, 0, 1, 0] = 1.0   # copies the carried estimate to the even taps
    w_bot = np.zeros((2, 2, 2, 1))
    w_bot[0, 0, 1, 0] = 1.0
    stages = [[kern(np.zeros((2, 2, 1, 1)), np.array([3.0]))],
              [kern(w_mid, np.array([-1.0]))],
              [kern(w_bot, np.array([0.0]))]]
    head = T.ConvKernel(t64(np.array([1.0, 0.5]).reshape(1, 1, 1, 2)), stride=1)
    fg = top_down_fuse(maps, Upsampler(stages=stages, head=head)).data[:, :, 0]

    carry_top = np.full((2, 2), 3.0)                    # raw bias, no squash
    mid = np.full((4, 4), -1.0)
    mid[::2, ::2] += carry_top                          # single tap at (0, 0)
    carry_mid = sig(mid)                                # squashed here
    est = np.zeros((8, 8))
    est[::2, ::2] = carry_mid
    expect = np.exp(est) / (np.exp(est) + np.exp(0.5 * est))
    assert rel_err(fg, expect) < 1e-12


def test_fuse_validates_geometry():
    ups = Upsampler(stages=[[kern(np.zeros((2, 2, 1, 1)))]],
                    head=T.ConvKernel(t64(np.zeros((1, 1, 1, 2))), stride=1))
    with pytest.raises(ShapeError):
        top_down_fuse([], ups)
    with pytest.raises(ShapeError):
        top_down_fuse([t64(np.zeros((2, 2, 1))), t64(np.zeros((4, 4, 1)))], ups)
    with pytest.raises(ShapeError):  # stage count mismatch
        top_down_fuse([t64(np.zeros((4, 4, 1))), t64(np.zeros((2, 2, 1)))], ups)


def test_extract_box_picks_heaviest_component():
    p = np.zeros((8, 8))
    p[1, 1:4] = 0.6            # mass 1.8 spread over three pixels
    p[5, 6] = 0.9              # a single brighter pixel, less total mass
    box = extract_box(p, threshold=0.5)
    assert (box.x0, box.y0, box.x1, box.y1) == (1, 1, 3, 1)


def test_extract_box_threshold_is_strict_and_has_argmax_fallback():
    p = np.full((4, 4), 0.5)
    p[2, 3] = 0.49
    p[1, 2] = 0.4999
    box = extract_box(p, threshold=0.5)  # nothing strictly above 0.5
    assert (box.x0, box.y0, box.x1, box.y1) == (0, 0, 0, 0)  # first argmax tie
    p[1, 2] = 0.7
    box = extract_box(p, threshold=0.5)
    assert (box.x0, box.y0, box.x1, box.y1) == (2, 1, 2, 1)


def test_extract_box_diagonal_is_not_connected():
    p = np.zeros((5, 5))
    p[0, 0] = 0.8
    p[1, 1] = 0.9  # touches only diagonally: separate component
    box = extract_box(p, threshold=0.5)
    assert (box.x0, box.y0, box.x1, box.y1) == (1, 1, 1, 1)


def test_extract_box_matches_flood_oracle_on_random_maps():
    rng = np.random.default_rng(41)
    for _ in range(60):
        p = rng.uniform(0, 1, size=(12, 12))
        got = extract_box(p, threshold=0.55)
        assert (got.x0, got.y0, got.x1, got.y1) == best_component_box(p, 0.55)


def test_extract_box_accepts_tensor_and_channel_dim():
    p = np.zeros((4, 4, 1))
    p[2, 2, 0] = 0.9
    for arg in (p, T.Tensor(p)):
        box = extract_box(arg)
        assert (box.x0, box.y0, box.x1, box.y1) == (2, 2, 2, 2)
    with pytest.raises(ShapeError):
        extract_box(np.zeros((4, 4, 2)))


def test_box_mass_fraction_projects_box_to_coarse_grid():
    p = np.zeros((4, 4))
    p[0, 0] = 1.0
    p[3, 3] = 3.0
    # canvas 64: box covering the bottom-right quadrant maps to cells 2..3
    frac = box_mass_fraction(p, BoundingBox(32, 32, 63, 63), canvas=64)
    assert abs(frac - 0.75) < 1e-12
    # full-canvas box captures everything
    assert box_mass_fraction(p, BoundingBox(0, 0, 63, 63), 64) == 1.0
    assert box_mass_fraction(np.zeros((4, 4)), BoundingBox(0, 0, 63, 63), 64) == 0.0
