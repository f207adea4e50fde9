"""Backbone, per-layer attention, and model assembly.

The extractor is a chain of stride-2 3x3 conv+relu blocks shared by the
scene image and the query patch.  After each block an attention map is
computed from the (feature, query-feature) pair and multiplied into the
features before they feed the next block, so later layers only see what
earlier attention let through.  The maps collected along the way form
the pyramid consumed by the up-sampling cascade.

Variants:
  full   four-branch attention + learned deconv cascade
  ss     single-branch attention (one depthwise 3x3), same cascade
  no-de  four-branch attention, cascade replaced by fixed bilinear
         up-sampling of the top attention map
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .attention import (BRANCH_KINDS, AttentionBlock, AttentionBranch,
                        apply_attention, attention_map, query_cascade_plan)
from .boxes import BoundingBox
from .errors import ShapeError
from .tensor import ConvKernel, Tensor, as_tensor
from .upsampler import Upsampler, extract_box, top_down_fuse

VARIANTS = ("full", "ss", "no-de")


@dataclass(frozen=True)
class LayerSpec:
    channels: int
    kernel: int = 3
    stride: int = 2


DEFAULT_LAYERS = (LayerSpec(16), LayerSpec(32), LayerSpec(32), LayerSpec(64))


@dataclass
class NetworkConfig:
    layers: tuple = DEFAULT_LAYERS
    in_channels: int = 3
    input_size: int = 64
    query_size: int = 28
    variant: str = "full"
    attention_after: tuple | None = None  # per-layer flags, default all on
    sim_channels: int = 64                # width of the shared similarity head

    def __post_init__(self):
        self.layers = tuple(LayerSpec(**l) if isinstance(l, dict) else l
                            for l in self.layers)
        if len(self.layers) < 2:
            raise ShapeError("need at least two extractor layers")
        if self.variant not in VARIANTS:
            raise ShapeError(f"unknown variant {self.variant!r}, pick from {VARIANTS}")
        size = self.input_size
        for i, spec in enumerate(self.layers):
            if spec.channels < 1 or spec.kernel < 1 or spec.stride < 1:
                raise ShapeError(f"bad layer spec at index {i}: {spec}")
            if size % spec.stride != 0:
                raise ShapeError(
                    f"input size {self.input_size} does not divide evenly "
                    f"through layer {i} (stride {spec.stride} at size {size})")
            size //= spec.stride
        if self.query_size < 1:
            raise ShapeError("query size must be positive")
        flags = self.attention_flags()
        if len(flags) != len(self.layers):
            raise ShapeError("attention_after length must match layer count")
        if not flags[-1]:
            raise ShapeError("the last layer must carry attention")

    def attention_flags(self) -> tuple:
        if self.attention_after is None:
            return tuple(True for _ in self.layers)
        return tuple(bool(f) for f in self.attention_after)

    def feature_sizes(self) -> list:
        sizes = []
        size = self.input_size
        for spec in self.layers:
            size //= spec.stride
            sizes.append(size)
        return sizes

    def query_sizes(self) -> list:
        sizes = []
        size = self.query_size
        for spec in self.layers:
            size = -(-size // spec.stride)  # same padding keeps ceil(size/stride)
            sizes.append(size)
        return sizes

    def branch_kinds(self) -> tuple:
        return ("dw3",) if self.variant == "ss" else BRANCH_KINDS

    def to_dict(self) -> dict:
        return {
            "layers": [{"channels": l.channels, "kernel": l.kernel, "stride": l.stride}
                       for l in self.layers],
            "in_channels": self.in_channels,
            "input_size": self.input_size,
            "query_size": self.query_size,
            "variant": self.variant,
            "attention_after": list(self.attention_flags()),
            "sim_channels": self.sim_channels,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkConfig":
        d = dict(d)
        if "layers" in d:
            d["layers"] = tuple(LayerSpec(**l) for l in d["layers"])
        if "attention_after" in d and d["attention_after"] is not None:
            d["attention_after"] = tuple(d["attention_after"])
        return cls(**d)


@dataclass
class AttentionPyramid:
    maps: list            # single-channel attention maps, finest first
    final: Tensor | None = None


@dataclass
class ForwardResult:
    pyramid: AttentionPyramid
    top_features: Tensor        # last layer's features before attention
    top_attention: Tensor
    query_top: Tensor           # query features at the last layer


class Model:
    def __init__(self, cfg: NetworkConfig, extractor, blocks, upsampler, sim_head,
                 params):
        self.cfg = cfg
        self.extractor = extractor          # list[ConvKernel]
        self.blocks = blocks                # list[AttentionBlock | None]
        self.upsampler = upsampler          # Upsampler | None (no-de)
        self.sim_head = sim_head            # ConvKernel 1x1 -> sim_channels
        self._params = dict(params)

    def named_params(self) -> dict:
        return dict(self._params)

    def forward(self, image, query, attention_override=None) -> ForwardResult:
        cfg = self.cfg
        img = as_tensor(image)
        qry = as_tensor(query)
        if img.shape != (cfg.input_size, cfg.input_size, cfg.in_channels):
            raise ShapeError(f"image shape {img.shape}, model wants "
                             f"({cfg.input_size}, {cfg.input_size}, {cfg.in_channels})")
        if qry.shape != (cfg.query_size, cfg.query_size, cfg.in_channels):
            raise ShapeError(f"query shape {qry.shape}, model wants "
                             f"({cfg.query_size}, {cfg.query_size}, {cfg.in_channels})")
        f, fq = img, qry
        maps = []
        top_features = None
        for kern, block in zip(self.extractor, self.blocks):
            f = T.relu(T.conv2d(f, kern))
            fq = T.relu(T.conv2d(fq, kern))
            if block is None:
                continue
            if attention_override is not None:
                att = as_tensor(np.asarray(attention_override[len(maps)],
                                           dtype=f.data.dtype))
                if att.shape != (f.height, f.width, 1):
                    raise ShapeError(f"attention override {att.shape} does not fit "
                                     f"({f.height}, {f.width}, 1)")
            else:
                att = attention_map(f, fq, block)
            maps.append(att)
            top_features = f
            f = apply_attention(f, att)
        return ForwardResult(pyramid=AttentionPyramid(maps=maps),
                             top_features=top_features,
                             top_attention=maps[-1],
                             query_top=fq)

    def localization_map(self, fwd: ForwardResult, return_probs: bool = False):
        """Full-resolution foreground probability map for one forward pass."""
        if self.cfg.variant == "no-de":
            fg = T.bilinear_upsample(fwd.top_attention,
                                     self.cfg.input_size, self.cfg.input_size)
            return (fg, None) if return_probs else fg
        return top_down_fuse(fwd.pyramid.maps, self.upsampler, return_probs=return_probs)

    def localize(self, image, query, threshold: float = 0.5):
        """Run the model and reduce the map to a box.

        Returns (BoundingBox, probability map as a numpy array).
        """
        fwd = self.forward(image, query)
        fg = self.localization_map(fwd)
        fwd.pyramid.final = fg
        prob = fg.data[:, :, 0].copy()
        return extract_box(prob, threshold=threshold), prob


def xavier_uniform(rng, shape, fan_in, fan_out, dtype):
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def build_network(cfg: NetworkConfig, seed: int = 0, dtype=np.float32) -> Model:
    """Create a model with Xavier-uniform weights and zero biases.

    Parameter creation order is fixed, so the same (cfg, seed) always
    produces bit-identical weights and a stable checkpoint name set.
    """
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    params: dict = {}

    def reg(name, arr):
        t = Tensor(arr, requires_grad=True)
        params[name] = t
        return t

    def conv(name, kh, kw, cin, cout, stride=1, padding="same"):
        w = reg(name + ".w", xavier_uniform(rng, (kh, kw, cin, cout),
                                            kh * kw * cin, kh * kw * cout, dtype))
        b = reg(name + ".b", np.zeros(cout, dtype=dtype))
        return ConvKernel(w, b, stride=stride, padding=padding)

    def dwconv(name, kh, kw, c, stride=1, padding="same"):
        w = reg(name + ".w", xavier_uniform(rng, (kh, kw, c),
                                            kh * kw, kh * kw, dtype))
        return ConvKernel(w, stride=stride, padding=padding, depthwise=True)

    flags = cfg.attention_flags()
    qsizes = cfg.query_sizes()
    kinds = cfg.branch_kinds()

    extractor = []
    blocks = []
    cin = cfg.in_channels
    for l, spec in enumerate(cfg.layers):
        extractor.append(conv(f"layer{l}.conv", spec.kernel, spec.kernel,
                              cin, spec.channels, stride=spec.stride))
        c = spec.channels
        if not flags[l]:
            blocks.append(None)
            cin = c
            continue
        branches = []
        for kind in kinds:
            base = f"layer{l}.attn.{kind}"
            if kind == "dw3":
                context = [dwconv(base + ".ctx0", 3, 3, c)]
            elif kind == "dw3x2":
                context = [dwconv(base + ".ctx0", 3, 3, c),
                           dwconv(base + ".ctx1", 3, 3, c)]
            elif kind == "dw5":
                context = [dwconv(base + ".ctx0", 5, 5, c)]
            elif kind == "pool2":
                context = []
            else:
                raise ShapeError(f"unknown branch kind {kind!r}")
            mid = max(c // 2, 1)
            branches.append(AttentionBranch(
                kind=kind,
                context=context,
                head_reduce=conv(base + ".head0", 1, 1, c, mid),
                head_project=conv(base + ".head1", 1, 1, mid, 1)))
        cascade = []
        qh = qw = qsizes[l]
        for i, (kh, kw, stride) in enumerate(query_cascade_plan(qh, qw)):
            cascade.append(dwconv(f"layer{l}.attn.query{i}", kh, kw, c,
                                  stride=stride, padding="valid"))
        fusion = conv(f"layer{l}.attn.fusion", 3, 3, len(kinds), 1)
        # gates start nearly open (sigmoid(2) ~ 0.88): early training sees
        # full-strength features instead of 0.5^L-damped ones
        fusion.bias.data += 2.0
        blocks.append(AttentionBlock(branches=branches, fusion=fusion,
                                     query_encoder=cascade))
        cin = c

    upsampler = None
    if cfg.variant != "no-de":
        att_sizes = [s for s, f in zip(cfg.feature_sizes(), flags) if f]
        targets = att_sizes[:-1][::-1] + [cfg.input_size]  # top map climbs these
        stages = []
        src = att_sizes[-1]
        for depth, dst in enumerate(targets):
            if dst % src != 0:
                raise ShapeError(f"cannot up-sample {src} to {dst} with integer scale")
            scale = dst // src
            chain = []
            cin_stage = 1 if depth == 0 else 2
            step = 0
            while True:
                factor = 2 if scale % 2 == 0 and scale > 1 else scale
                k = 2 * factor if factor > 1 else 3
                chain.append(conv(f"upsampler.lv{depth}.d{step}", k, k,
                                  cin_stage, 1, stride=factor))
                cin_stage = 1
                scale //= factor
                step += 1
                if scale <= 1:
                    break
            stages.append(chain)
            src = dst
        head = conv("upsampler.head", 1, 1, 1, 2)
        upsampler = Upsampler(stages=stages, head=head)

    sim_head = conv("sim", 1, 1, cfg.layers[-1].channels, cfg.sim_channels)

    return Model(cfg, extractor, blocks, upsampler, sim_head, params)
