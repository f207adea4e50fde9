"""Top-down fusion of the attention pyramid into a full-resolution map.

The pyramid holds one single-channel attention map per layer, finest
first.  Starting from the coarsest map, each level runs a chain of
learned transposed convs (stride 2, chained when the scale gap is
larger), concatenating the incoming coarse estimate with the next
finer attention map before each step.  The top level's output is left
raw, intermediate levels go through a sigmoid, and the final level is
classified per pixel by a 1x1 two-channel head with a softmax; the
foreground channel is the localization map, the same size as the
network input.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .boxes import BoundingBox
from .errors import ShapeError
from .tensor import ConvKernel, Tensor


@dataclass
class Upsampler:
    stages: list[list[ConvKernel]]  # index 0 = coarsest pyramid level
    head: ConvKernel                # 1x1, 1 -> 2 class logits

    def params(self):
        out = []
        for chain in self.stages:
            out.extend(chain)
        out.append(self.head)
        return out


def top_down_fuse(maps, ups: Upsampler, return_probs: bool = False):
    """Fuse pyramid maps (finest first) down to the foreground map.

    Returns the (H, W, 1) foreground probability map, or with
    return_probs=True the pair (foreground, both-class softmax).
    """
    maps = list(maps)
    if not maps:
        raise ShapeError("top_down_fuse: empty pyramid")
    if len(ups.stages) != len(maps):
        raise ShapeError(
            f"upsampler has {len(ups.stages)} stages for {len(maps)} pyramid maps")
    for fine, coarse in zip(maps, maps[1:]):
        if coarse.height > fine.height or coarse.width > fine.width:
            raise ShapeError("pyramid maps must be ordered finest first")

    carry = None
    for depth, chain in enumerate(ups.stages):
        m = maps[-1 - depth]
        if carry is not None and carry.shape != m.shape:
            raise ShapeError(
                f"carry {carry.shape} does not align with pyramid map {m.shape}")
        x = m if carry is None else T.concat_channels([m, carry])
        for kern in chain:
            x = T.transposed_conv2d(x, kern)
        if depth == len(ups.stages) - 1:
            probs = T.pixel_softmax(T.conv2d(x, ups.head))
            fg = T.slice_channels(probs, 0, 1)
            return (fg, probs) if return_probs else fg
        carry = x if depth == 0 else T.sigmoid(x)
    raise AssertionError("unreachable")


def extract_box(prob_map, threshold: float = 0.5) -> BoundingBox:
    """Tight box of the strongest above-threshold blob.

    Pixels strictly above the threshold are grouped 4-connected; the
    component with the largest summed probability wins and its tight
    bounds are returned.  If nothing clears the threshold the box is
    the single argmax pixel.
    """
    if isinstance(prob_map, Tensor):
        prob_map = prob_map.data
    p = np.asarray(prob_map, dtype=np.float64)
    if p.ndim == 3:
        if p.shape[2] != 1:
            raise ShapeError(f"extract_box wants one channel, got {p.shape}")
        p = p[:, :, 0]
    if p.ndim != 2 or p.size == 0:
        raise ShapeError(f"extract_box: bad map shape {p.shape}")

    h, w = p.shape
    mask = p > threshold
    if not mask.any():
        y, x = divmod(int(p.argmax()), w)
        return BoundingBox(x, y, x, y)

    visited = np.zeros((h, w), dtype=bool)
    best = None
    best_mass = -1.0
    for sy in range(h):
        for sx in range(w):
            if not mask[sy, sx] or visited[sy, sx]:
                continue
            mass = 0.0
            x0, y0, x1, y1 = sx, sy, sx, sy
            queue = deque([(sy, sx)])
            visited[sy, sx] = True
            while queue:
                y, x = queue.popleft()
                mass += p[y, x]
                x0, x1 = min(x0, x), max(x1, x)
                y0, y1 = min(y0, y), max(y1, y)
                for ny, nx in ((y - 1, x), (y + 1, x), (y, x - 1), (y, x + 1)):
                    if 0 <= ny < h and 0 <= nx < w and mask[ny, nx] and not visited[ny, nx]:
                        visited[ny, nx] = True
                        queue.append((ny, nx))
            if mass > best_mass:
                best_mass = mass
                best = BoundingBox(x0, y0, x1, y1)
    return best


def box_mass_fraction(prob_map, box: BoundingBox, canvas: int) -> float:
    """Share of the map's total mass that falls inside the box.

    The box lives on a canvas x canvas image; when the map is coarser
    the box is projected onto the map grid, rounded outward so partially
    covered cells count.  A zero-mass map gives 0 by convention.
    """
    if isinstance(prob_map, Tensor):
        prob_map = prob_map.data
    p = np.asarray(prob_map, dtype=np.float64)
    if p.ndim == 3:
        p = p[:, :, 0]
    h, w = p.shape
    x0 = max(int(np.floor(box.x0 * w / canvas)), 0)
    y0 = max(int(np.floor(box.y0 * h / canvas)), 0)
    x1 = min(int(np.ceil((box.x1 + 1) * w / canvas)) - 1, w - 1)
    y1 = min(int(np.ceil((box.y1 + 1) * h / canvas)) - 1, h - 1)
    total = p.sum()
    if total <= 0:
        return 0.0
    return float(p[y0:y1 + 1, x0:x1 + 1].sum() / total)
