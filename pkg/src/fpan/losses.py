"""Training objective: segmentation + similarity + weight decay.

Per sample, the segmentation term is the mean per-pixel binary
cross-entropy between the predicted foreground map and a box-shaped 0/1
target.  The similarity term is the cosine between two 64-d embeddings
produced by one shared head (1x1 conv then global average pooling) run
on the attention-weighted top features and on the query's top features;
it enters the total with a negative sign so that training pulls the two
embeddings together.  An L2 penalty over every parameter rounds it out:

    total = mean_i(seg_i - sim_weight * sim_i) + weight_decay * sum ||W||^2
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .boxes import BoundingBox
from .errors import ShapeError
from .tensor import ConvKernel, Tensor


def make_target_map(box: BoundingBox, size: int, dtype=np.float32) -> np.ndarray:
    """Rasterize a box into a (size, size, 1) array of ones inside it."""
    if box.x0 < 0 or box.y0 < 0 or box.x1 >= size or box.y1 >= size:
        raise ShapeError(f"box {box} does not fit a {size}x{size} canvas")
    m = np.zeros((size, size, 1), dtype=dtype)
    m[box.y0:box.y1 + 1, box.x0:box.x1 + 1, 0] = 1.0
    return m


def seg_loss(fg_map: Tensor, target: np.ndarray) -> Tensor:
    """Mean pixel BCE of the foreground map against the box target."""
    return T.bce_mean(fg_map, target)


def sim_loss(top_features: Tensor, top_attention: Tensor, query_top: Tensor,
             head: ConvKernel) -> Tensor:
    """Cosine between pooled embeddings of attended features and query."""
    attended = T.channelwise_mul(top_features, top_attention)
    va = T.spatial_mean(T.conv2d(attended, head))
    vq = T.spatial_mean(T.conv2d(query_top, head))
    return T.cosine_similarity(va, vq)


def total_loss(seg_terms, sim_terms, params, sim_weight: float = 0.1,
               weight_decay: float = 1e-4):
    """Combine per-sample terms and the L2 penalty into one scalar graph.

    Returns (total, mean_seg, mean_sim); the means are scalar tensors on
    the same graph, handy for logging without a second pass.
    """
    seg_terms = list(seg_terms)
    sim_terms = list(sim_terms)
    if not seg_terms or len(seg_terms) != len(sim_terms):
        raise ShapeError("need one seg and one sim term per sample")
    n = len(seg_terms)
    seg_sum = seg_terms[0]
    for t in seg_terms[1:]:
        seg_sum = T.add(seg_sum, t)
    sim_sum = sim_terms[0]
    for t in sim_terms[1:]:
        sim_sum = T.add(sim_sum, t)
    mean_seg = T.scale(seg_sum, 1.0 / n)
    mean_sim = T.scale(sim_sum, 1.0 / n)
    total = T.sub(mean_seg, T.scale(mean_sim, sim_weight))
    if weight_decay:
        reg = None
        for p in params:
            sq = T.sum_squares(p)
            reg = sq if reg is None else T.add(reg, sq)
        if reg is not None:
            total = T.add(total, T.scale(reg, weight_decay))
    return total, mean_seg, mean_sim
