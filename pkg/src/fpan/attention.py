"""Fine-grained attention over one feature layer.

Given an image feature map f (H, W, C) and the query's feature map at
the same depth, the block:

  1. encodes the query map down to a single (1, 1, C) embedding through
     a cascade of stride-2 valid depthwise convs (kernels never larger
     than the remaining plane), finishing with one full-extent kernel;
  2. runs a bank of stride-1 shape-preserving local-context branches on
     f (depthwise 3x3, two stacked depthwise 3x3, depthwise 5x5, and a
     2x2 stride-1 max pool);
  3. adds the query embedding onto every spatial position of each branch
     and scores it with that branch's own small head (1x1 C->C/2, relu,
     1x1 C/2->1), giving one raw map per branch;
  4. stacks the per-branch maps and fuses them with a 3x3 conv down to a
     single channel, squashed by a sigmoid into the final (H, W, 1)
     attention map.

Branch kinds are fixed; every branch keeps the spatial size of f.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from . import tensor as T
from .errors import ShapeError
from .tensor import ConvKernel, Tensor

BRANCH_KINDS = ("dw3", "dw3x2", "dw5", "pool2")


@dataclass
class AttentionBranch:
    kind: str
    context: list[ConvKernel] = field(default_factory=list)  # depthwise, empty for pool2
    head_reduce: ConvKernel = None
    head_project: ConvKernel = None

    def local_context(self, f: Tensor) -> Tensor:
        if self.kind == "pool2":
            return T.max_pool(f, size=2, stride=1, padding="same")
        out = f
        for k in self.context:
            out = T.depthwise_conv(out, k)
        return out

    def score(self, fbar: Tensor, q: Tensor) -> Tensor:
        """Raw single-channel response for one branch: fuse then project."""
        fused = T.broadcast_add(fbar, q)
        hidden = T.relu(T.conv2d(fused, self.head_reduce))
        return T.conv2d(hidden, self.head_project)


@dataclass
class AttentionBlock:
    branches: list[AttentionBranch]
    fusion: ConvKernel                 # 3x3, n_branches -> 1
    query_encoder: list[ConvKernel]    # depthwise cascade down to 1x1

    def params(self):
        out = []
        for br in self.branches:
            for k in br.context:
                out.append(k)
            out.append(br.head_reduce)
            out.append(br.head_project)
        out.append(self.fusion)
        out.extend(self.query_encoder)
        return out


def query_cascade_plan(h: int, w: int) -> list[tuple[int, int, int]]:
    """Kernel sizes and strides that shrink (h, w) to exactly 1x1.

    Stride-2 valid stages with kernels min(3, side) run while either side
    exceeds 3; one final full-extent valid kernel collapses what is left.
    """
    if h < 1 or w < 1:
        raise ShapeError(f"query plane {h}x{w} is empty")
    plan = []
    while max(h, w) > 3:
        kh, kw = min(3, h), min(3, w)
        plan.append((kh, kw, 2))
        h = (h - kh) // 2 + 1
        w = (w - kw) // 2 + 1
    plan.append((h, w, 1))
    return plan


def encode_query(fq: Tensor, cascade) -> Tensor:
    """Collapse a query feature map to (1, 1, C) through the cascade."""
    out = fq
    for k in cascade:
        out = T.depthwise_conv(out, k)
    if out.height != 1 or out.width != 1:
        raise ShapeError(
            f"query cascade left a {out.height}x{out.width} plane, expected 1x1")
    return out


def attention_map(f: Tensor, fq: Tensor, block: AttentionBlock) -> Tensor:
    """Full block: (H, W, C) features + query features -> (H, W, 1) in (0, 1)."""
    if f.channels != fq.channels:
        raise ShapeError(
            f"feature/query channel mismatch: {f.channels} vs {fq.channels}")
    q = encode_query(fq, block.query_encoder)
    scores = [br.score(br.local_context(f), q) for br in block.branches]
    stacked = scores[0] if len(scores) == 1 else T.concat_channels(scores)
    if stacked.channels != block.fusion.in_channels:
        raise ShapeError(
            f"fusion kernel expects {block.fusion.in_channels} maps, got {stacked.channels}")
    return T.sigmoid(T.conv2d(stacked, block.fusion))


def apply_attention(f: Tensor, att: Tensor) -> Tensor:
    """Weight every channel of f by the single-channel attention map."""
    return T.channelwise_mul(f, att)
