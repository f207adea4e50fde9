"""Dense tensors with reverse-mode automatic differentiation on numpy.

Feature tensors are numpy arrays of shape (height, width, channels) in C
order: row-major, channels fastest.  Scalars are tensors of shape
(1, 1, 1).  Convolution weights are rank 4 (kh, kw, in_ch, out_ch),
depthwise weights rank 3 (kh, kw, ch), biases rank 1 (out_ch,).

Each op that touches a grad-requiring tensor records a node with a
backward closure.  Tensor.backward() on a scalar walks the recorded
graph once in reverse topological order (iterative, so deep chains of
stacked layers do not hit the recursion limit), accumulates gradients
into .grad, and then drops the graph references so intermediate buffers
can be collected.  Child lists are tuples and every reduction uses a
fixed numpy evaluation order, which keeps repeated runs bit-identical.
"""

from __future__ import annotations

import logging

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeError

log = logging.getLogger(__name__)

_FLOATS = (np.float32, np.float64)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_backward", "_prev", "_spent")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data)
        if arr.dtype not in _FLOATS:
            arr = arr.astype(np.float32)
        self.data = np.ascontiguousarray(arr)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._backward = None
        self._prev = ()
        self._spent = False

    # -- shape helpers ---------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() on non-scalar tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, grad={self.requires_grad})"

    # -- autodiff --------------------------------------------------------

    def backward(self):
        """Backpropagate from this scalar through the recorded graph.

        Single-shot: the graph below this tensor is released afterwards
        and a second call raises.
        """
        if self.data.size != 1:
            raise ShapeError(f"backward() needs a scalar, got shape {self.shape}")
        if self._spent:
            raise RuntimeError("backward() already ran for this tensor")

        # Iterative post-order walk; children land before parents.
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._prev:
                if id(parent) not in seen:
                    stack.append((parent, False))

        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None:
                node._backward()
        self._spent = True
        for node in order:
            node._prev = ()
            node._backward = None

    # -- operator sugar ----------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def sum(self):
        return tsum(self)

    def mean(self):
        return tmean(self)

    def relu(self):
        return relu(self)

    def sigmoid(self):
        return sigmoid(self)


def as_tensor(x, requires_grad: bool = False) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, requires_grad=requires_grad)


def scalar(value: float, dtype=np.float32) -> Tensor:
    return Tensor(np.full((1, 1, 1), value, dtype=dtype))


def _accum(t: Tensor, g: np.ndarray):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.ascontiguousarray(g.astype(t.data.dtype, copy=False))
    else:
        t.grad = t.grad + g.astype(t.data.dtype, copy=False)


def _node(data: np.ndarray, inputs: tuple, backward) -> Tensor:
    """Wrap op output; records the backward closure only if needed."""
    needs = any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=needs)
    if needs:
        out._prev = tuple(inputs)

        def run():
            backward(out.grad)

        out._backward = run
    return out


def _want_rank3(t: Tensor, op: str):
    if t.data.ndim != 3:
        raise ShapeError(f"{op}: expected rank-3 tensor, got shape {t.shape}")


def _want_same_shape(a: Tensor, b: Tensor, op: str):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# -- elementwise ---------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    _want_same_shape(a, b, "add")

    def bward(g):
        _accum(a, g)
        _accum(b, g)

    return _node(a.data + b.data, (a, b), bward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _want_same_shape(a, b, "sub")

    def bward(g):
        _accum(a, g)
        _accum(b, -g)

    return _node(a.data - b.data, (a, b), bward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _want_same_shape(a, b, "mul")

    def bward(g):
        _accum(a, g * b.data)
        _accum(b, g * a.data)

    return _node(a.data * b.data, (a, b), bward)


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)

    def bward(g):
        _accum(a, g * c)

    return _node(a.data * c, (a,), bward)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0

    def bward(g):
        _accum(a, g * mask)

    return _node(np.where(mask, a.data, 0), (a,), bward)


def sigmoid(a: Tensor) -> Tensor:
    # Split by sign to avoid exp overflow on large negatives.
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)

    def bward(g):
        _accum(a, g * out * (1.0 - out))

    return _node(out, (a,), bward)


# -- reductions ----------------------------------------------------------


def tsum(a: Tensor) -> Tensor:
    val = np.array(a.data.sum(), dtype=a.data.dtype).reshape(1, 1, 1)

    def bward(g):
        _accum(a, np.full_like(a.data, g.reshape(())))

    return _node(val, (a,), bward)


def tmean(a: Tensor) -> Tensor:
    n = a.data.size
    val = np.array(a.data.mean(), dtype=a.data.dtype).reshape(1, 1, 1)

    def bward(g):
        _accum(a, np.full_like(a.data, g.reshape(()) / n))

    return _node(val, (a,), bward)


def sum_squares(a: Tensor) -> Tensor:
    val = np.array((a.data * a.data).sum(), dtype=a.data.dtype).reshape(1, 1, 1)

    def bward(g):
        _accum(a, 2.0 * g.reshape(()) * a.data)

    return _node(val, (a,), bward)


def spatial_mean(a: Tensor) -> Tensor:
    """Global average pool: (H, W, C) -> (1, 1, C)."""
    _want_rank3(a, "spatial_mean")
    n = a.height * a.width
    val = a.data.mean(axis=(0, 1), keepdims=True)

    def bward(g):
        _accum(a, np.broadcast_to(g / n, a.shape))

    return _node(val, (a,), bward)


# -- structure ops -------------------------------------------------------


def broadcast_add(f: Tensor, v: Tensor) -> Tensor:
    """Add a (1, 1, C) vector onto every spatial location of (H, W, C)."""
    _want_rank3(f, "broadcast_add")
    _want_rank3(v, "broadcast_add")
    if v.height != 1 or v.width != 1 or v.channels != f.channels:
        raise ShapeError(f"broadcast_add: vector shape {v.shape} does not fit {f.shape}")

    def bward(g):
        _accum(f, g)
        _accum(v, g.sum(axis=(0, 1), keepdims=True))

    return _node(f.data + v.data, (f, v), bward)


def channelwise_mul(f: Tensor, m: Tensor) -> Tensor:
    """Scale all channels of (H, W, C) by a single-channel map (H, W, 1)."""
    _want_rank3(f, "channelwise_mul")
    _want_rank3(m, "channelwise_mul")
    if m.channels != 1 or m.height != f.height or m.width != f.width:
        raise ShapeError(f"channelwise_mul: map shape {m.shape} does not fit {f.shape}")

    def bward(g):
        _accum(f, g * m.data)
        _accum(m, (g * f.data).sum(axis=2, keepdims=True))

    return _node(f.data * m.data, (f, m), bward)


def concat_channels(parts) -> Tensor:
    parts = list(parts)
    if not parts:
        raise ShapeError("concat_channels: empty input list")
    h, w = parts[0].height, parts[0].width
    for p in parts:
        _want_rank3(p, "concat_channels")
        if p.height != h or p.width != w:
            raise ShapeError("concat_channels: spatial sizes differ")
    splits = np.cumsum([p.channels for p in parts])[:-1]

    def bward(g):
        for p, piece in zip(parts, np.split(g, splits, axis=2)):
            _accum(p, piece)

    return _node(np.concatenate([p.data for p in parts], axis=2), tuple(parts), bward)


def slice_channels(a: Tensor, start: int, stop: int) -> Tensor:
    _want_rank3(a, "slice_channels")
    if not (0 <= start < stop <= a.channels):
        raise ShapeError(f"slice_channels: [{start}:{stop}] out of {a.channels} channels")

    def bward(g):
        full = np.zeros_like(a.data)
        full[:, :, start:stop] = g
        _accum(a, full)

    return _node(a.data[:, :, start:stop].copy(), (a,), bward)


# -- padding arithmetic ----------------------------------------------------


def same_pads(size: int, k: int, stride: int) -> tuple[int, int, int]:
    """Output size and (low, high) zero padding for 'same' windows.

    out = ceil(size / stride); when total padding is odd the extra unit
    goes on the high (bottom/right) side.
    """
    out = -(-size // stride)
    total = max((out - 1) * stride + k - size, 0)
    lo = total // 2
    return out, lo, total - lo


def valid_out(size: int, k: int, stride: int) -> int:
    return (size - k) // stride + 1


class ConvKernel:
    """Weights plus geometry for one convolution.

    weights: Tensor of shape (kh, kw, in_ch, out_ch), or (kh, kw, ch)
    when depthwise.  bias: Tensor (out_ch,) or None.
    """

    __slots__ = ("weights", "bias", "stride", "padding", "depthwise")

    def __init__(self, weights: Tensor, bias: Tensor | None = None,
                 stride: int = 1, padding: str = "same", depthwise: bool = False):
        weights = as_tensor(weights)
        want_rank = 3 if depthwise else 4
        if weights.data.ndim != want_rank:
            raise ShapeError(
                f"conv weights must be rank {want_rank}, got shape {weights.shape}")
        if bias is not None:
            bias = as_tensor(bias)
            if bias.data.ndim != 1 or bias.data.shape[0] != weights.data.shape[-1]:
                raise ShapeError(f"bias shape {bias.shape} does not fit weights {weights.shape}")
        if stride < 1:
            raise ShapeError(f"stride must be >= 1, got {stride}")
        if padding not in ("same", "valid"):
            raise ShapeError(f"padding must be 'same' or 'valid', got {padding!r}")
        self.weights = weights
        self.bias = bias
        self.stride = int(stride)
        self.padding = padding
        self.depthwise = bool(depthwise)

    @property
    def kh(self) -> int:
        return self.weights.data.shape[0]

    @property
    def kw(self) -> int:
        return self.weights.data.shape[1]

    @property
    def in_channels(self) -> int:
        return self.weights.data.shape[2]

    @property
    def out_channels(self) -> int:
        return self.weights.data.shape[-1]

    def params(self):
        if self.bias is None:
            return (self.weights,)
        return (self.weights, self.bias)


def _pad_geometry(h, w, kh, kw, stride, padding):
    if padding == "same":
        oh, pt, pb = same_pads(h, kh, stride)
        ow, pl, pr = same_pads(w, kw, stride)
    else:
        if h < kh or w < kw:
            raise ShapeError(f"valid conv: kernel ({kh}x{kw}) larger than input ({h}x{w})")
        oh, pt, pb = valid_out(h, kh, stride), 0, 0
        ow, pl, pr = valid_out(w, kw, stride), 0, 0
    if oh < 1 or ow < 1:
        raise ShapeError("conv produces an empty output")
    return oh, ow, pt, pb, pl, pr


def conv2d(x: Tensor, kernel: ConvKernel) -> Tensor:
    """Cross-correlation with zero padding; output (oh, ow, out_ch)."""
    _want_rank3(x, "conv2d")
    if kernel.depthwise:
        raise ShapeError("conv2d: got a depthwise kernel, use depthwise_conv")
    w = kernel.weights
    kh, kw, cin, cout = w.data.shape
    if cin != x.channels:
        raise ShapeError(f"conv2d: input has {x.channels} channels, kernel expects {cin}")
    s = kernel.stride
    oh, ow, pt, pb, pl, pr = _pad_geometry(x.height, x.width, kh, kw, s, kernel.padding)
    xp = np.pad(x.data, ((pt, pb), (pl, pr), (0, 0))) if (pt or pb or pl or pr) else x.data
    win = sliding_window_view(xp, (kh, kw), axis=(0, 1))[::s, ::s]  # (oh, ow, cin, kh, kw)
    out = np.einsum("hwcij,ijco->hwo", win, w.data, optimize=True)
    bias = kernel.bias
    if bias is not None:
        out = out + bias.data

    def bward(g):
        if w.requires_grad:
            _accum(w, np.einsum("hwcij,hwo->ijco", win, g, optimize=True))
        if bias is not None and bias.requires_grad:
            _accum(bias, g.sum(axis=(0, 1)))
        if x.requires_grad:
            gp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    gp[i:i + s * oh:s, j:j + s * ow:s] += g @ w.data[i, j].T
            _accum(x, gp[pt:pt + x.height, pl:pl + x.width])

    inputs = (x, w) if bias is None else (x, w, bias)
    return _node(np.ascontiguousarray(out), inputs, bward)


def depthwise_conv(x: Tensor, kernel: ConvKernel) -> Tensor:
    """Per-channel convolution: channel c of the output only sees channel c."""
    _want_rank3(x, "depthwise_conv")
    if not kernel.depthwise:
        raise ShapeError("depthwise_conv: kernel is not depthwise")
    w = kernel.weights
    kh, kw, c = w.data.shape
    if c != x.channels:
        raise ShapeError(f"depthwise_conv: input has {x.channels} channels, kernel {c}")
    s = kernel.stride
    oh, ow, pt, pb, pl, pr = _pad_geometry(x.height, x.width, kh, kw, s, kernel.padding)
    xp = np.pad(x.data, ((pt, pb), (pl, pr), (0, 0))) if (pt or pb or pl or pr) else x.data
    win = sliding_window_view(xp, (kh, kw), axis=(0, 1))[::s, ::s]  # (oh, ow, c, kh, kw)
    out = np.einsum("hwcij,ijc->hwc", win, w.data, optimize=True)
    bias = kernel.bias
    if bias is not None:
        out = out + bias.data

    def bward(g):
        if w.requires_grad:
            _accum(w, np.einsum("hwcij,hwc->ijc", win, g, optimize=True))
        if bias is not None and bias.requires_grad:
            _accum(bias, g.sum(axis=(0, 1)))
        if x.requires_grad:
            gp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    gp[i:i + s * oh:s, j:j + s * ow:s] += g * w.data[i, j]
            _accum(x, gp[pt:pt + x.height, pl:pl + x.width])

    inputs = (x, w) if bias is None else (x, w, bias)
    return _node(np.ascontiguousarray(out), inputs, bward)


def transposed_conv2d(x: Tensor, kernel: ConvKernel) -> Tensor:
    """Stride-s up-sampling conv; exact adjoint of the same-padded forward conv.

    Output is exactly (h*s, w*s, out_ch): each input pixel scatters a kernel
    copy on an s-spaced grid and the same-padding margin max(k-s, 0) is
    cropped symmetrically (extra unit cropped from the high side).
    """
    _want_rank3(x, "transposed_conv2d")
    if kernel.depthwise:
        raise ShapeError("transposed_conv2d: depthwise kernels not supported")
    w = kernel.weights
    kh, kw, cin, cout = w.data.shape
    if cin != x.channels:
        raise ShapeError(f"transposed_conv2d: input has {x.channels} channels, kernel expects {cin}")
    s = kernel.stride
    h, wd = x.height, x.width
    oh, ow = h * s, wd * s
    th = max(kh - s, 0)
    tw = max(kw - s, 0)
    pt, pl = th // 2, tw // 2
    full = np.zeros((oh + th, ow + tw, cout), dtype=x.data.dtype)
    for i in range(kh):
        for j in range(kw):
            full[i:i + s * h:s, j:j + s * wd:s] += x.data @ w.data[i, j]
    out = np.ascontiguousarray(full[pt:pt + oh, pl:pl + ow])
    bias = kernel.bias
    if bias is not None:
        out = out + bias.data

    def bward(g):
        gp = np.pad(g, ((pt, th - pt), (pl, tw - pl), (0, 0))) if (th or tw) else g
        gwin = sliding_window_view(gp, (kh, kw), axis=(0, 1))[::s, ::s]  # (h, w, cout, kh, kw)
        if x.requires_grad:
            _accum(x, np.einsum("hwoij,ijco->hwc", gwin, w.data, optimize=True))
        if w.requires_grad:
            _accum(w, np.einsum("hwoij,hwc->ijco", gwin, x.data, optimize=True))
        if bias is not None and bias.requires_grad:
            _accum(bias, g.sum(axis=(0, 1)))

    inputs = (x, w) if bias is None else (x, w, bias)
    return _node(out, inputs, bward)


def max_pool(x: Tensor, size: int = 2, stride: int = 1, padding: str = "same") -> Tensor:
    """Max over size x size windows; gradient flows to the first max per window."""
    _want_rank3(x, "max_pool")
    if size < 1 or stride < 1:
        raise ShapeError("max_pool: size and stride must be >= 1")
    oh, ow, pt, pb, pl, pr = _pad_geometry(x.height, x.width, size, size, stride, padding)
    neg = np.finfo(x.data.dtype).min
    xp = (np.pad(x.data, ((pt, pb), (pl, pr), (0, 0)), constant_values=neg)
          if (pt or pb or pl or pr) else x.data)
    win = sliding_window_view(xp, (size, size), axis=(0, 1))[::stride, ::stride]
    flat = win.reshape(oh, ow, x.channels, size * size)
    idx = flat.argmax(axis=3)  # first max on ties (row-major within the window)
    out = np.take_along_axis(flat, idx[..., None], axis=3)[..., 0]

    def bward(g):
        gp = np.zeros_like(xp)
        oy = (np.arange(oh) * stride)[:, None, None] + idx // size
        ox = (np.arange(ow) * stride)[None, :, None] + idx % size
        oc = np.broadcast_to(np.arange(x.channels)[None, None, :], idx.shape)
        np.add.at(gp, (oy, ox, oc), g)
        _accum(x, gp[pt:pt + x.height, pl:pl + x.width])

    return _node(np.ascontiguousarray(out), (x,), bward)


def pixel_softmax(x: Tensor) -> Tensor:
    """Softmax over the channel axis at every pixel."""
    _want_rank3(x, "pixel_softmax")
    z = x.data - x.data.max(axis=2, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=2, keepdims=True)

    def bward(g):
        _accum(x, p * (g - (g * p).sum(axis=2, keepdims=True)))

    return _node(p, (x,), bward)


def bilinear_upsample(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Fixed bilinear interpolation with half-pixel centers (align_corners off)."""
    _want_rank3(x, "bilinear_upsample")
    if out_h < 1 or out_w < 1:
        raise ShapeError("bilinear_upsample: empty output")
    h, w = x.height, x.width

    def grid(out_n, in_n):
        src = (np.arange(out_n) + 0.5) * in_n / out_n - 0.5
        lo = np.clip(np.floor(src).astype(int), 0, in_n - 1)
        hi = np.minimum(lo + 1, in_n - 1)
        frac = np.clip(src - lo, 0.0, 1.0)
        return lo, hi, frac

    y0, y1, fy = grid(out_h, h)
    x0, x1, fx = grid(out_w, w)
    wy = fy[:, None, None].astype(x.data.dtype)
    wx = fx[None, :, None].astype(x.data.dtype)
    d = x.data
    out = ((1 - wy) * (1 - wx) * d[np.ix_(y0, x0)] + (1 - wy) * wx * d[np.ix_(y0, x1)]
           + wy * (1 - wx) * d[np.ix_(y1, x0)] + wy * wx * d[np.ix_(y1, x1)])

    def bward(g):
        gx = np.zeros_like(d)
        yy0 = np.broadcast_to(y0[:, None], (out_h, out_w))
        yy1 = np.broadcast_to(y1[:, None], (out_h, out_w))
        xx0 = np.broadcast_to(x0[None, :], (out_h, out_w))
        xx1 = np.broadcast_to(x1[None, :], (out_h, out_w))
        np.add.at(gx, (yy0, xx0), (1 - wy) * (1 - wx) * g)
        np.add.at(gx, (yy0, xx1), (1 - wy) * wx * g)
        np.add.at(gx, (yy1, xx0), wy * (1 - wx) * g)
        np.add.at(gx, (yy1, xx1), wy * wx * g)
        _accum(x, gx)

    return _node(np.ascontiguousarray(out.astype(x.data.dtype)), (x,), bward)


# -- losses as graph ops ----------------------------------------------------


def bce_mean(pred: Tensor, target: np.ndarray, clamp: float = 1e-7) -> Tensor:
    """Mean binary cross-entropy; predictions clamped to [clamp, 1-clamp].

    Gradient is zero where the prediction was clamped.
    """
    _want_rank3(pred, "bce_mean")
    target = np.asarray(target, dtype=pred.data.dtype)
    if target.shape != pred.shape:
        raise ShapeError(f"bce_mean: target shape {target.shape} vs pred {pred.shape}")
    lo, hi = clamp, 1.0 - clamp
    p = np.clip(pred.data, lo, hi)
    n = p.size
    val = np.array(-(target * np.log(p) + (1 - target) * np.log1p(-p)).mean(),
                   dtype=pred.data.dtype).reshape(1, 1, 1)
    inside = (pred.data > lo) & (pred.data < hi)

    def bward(g):
        gx = np.where(inside, (p - target) / (p * (1 - p) * n), 0.0)
        _accum(pred, g.reshape(()) * gx)

    return _node(val, (pred,), bward)


def cosine_similarity(a: Tensor, b: Tensor) -> Tensor:
    """Cosine of the angle between two tensors viewed as flat vectors.

    A zero-norm side makes the value 0 with zero gradient (logged once
    per call site, not fatal).
    """
    _want_same_shape(a, b, "cosine_similarity")
    va = a.data.ravel()
    vb = b.data.ravel()
    na = float(np.sqrt(va @ va))
    nb = float(np.sqrt(vb @ vb))
    tiny = np.finfo(a.data.dtype).tiny
    if na <= tiny or nb <= tiny:
        log.warning("cosine_similarity: zero-norm vector, similarity pinned to 0")

        def bward_zero(g):
            pass

        return _node(np.zeros((1, 1, 1), dtype=a.data.dtype), (a, b), bward_zero)
    dot = float(va @ vb)
    c = dot / (na * nb)
    val = np.array(c, dtype=a.data.dtype).reshape(1, 1, 1)

    def bward(g):
        gs = g.reshape(())
        _accum(a, (gs * (vb / (na * nb) - c * va / (na * na))).reshape(a.shape))
        _accum(b, (gs * (va / (na * nb) - c * vb / (nb * nb))).reshape(b.shape))

    return _node(val, (a, b), bward)
