"""Slow, independent reference implementations used to cross-check the package.

Everything here is written the dumb way on purpose: explicit python
loops over output pixels, no shared helpers with the code under test.
"""

import numpy as np


def _same_geometry(size, k, stride):
    out = int(np.ceil(size / stride))
    total = max((out - 1) * stride + k - size, 0)
    lo = total // 2
    return out, lo


def conv2d_loop(x, w, bias=None, stride=1, padding="same"):
    """Reference cross-correlation. x (h,w,cin), w (kh,kw,cin,cout)."""
    h, wd, cin = x.shape
    kh, kw, cin2, cout = w.shape
    assert cin == cin2
    if padding == "same":
        oh, pt = _same_geometry(h, kh, stride)
        ow, pl = _same_geometry(wd, kw, stride)
    else:
        oh = (h - kh) // stride + 1
        ow = (wd - kw) // stride + 1
        pt = pl = 0
    out = np.zeros((oh, ow, cout), dtype=x.dtype)
    for oy in range(oh):
        for ox in range(ow):
            for oc in range(cout):
                acc = 0.0
                for i in range(kh):
                    for j in range(kw):
                        iy = oy * stride - pt + i
                        ix = ox * stride - pl + j
                        if 0 <= iy < h and 0 <= ix < wd:
                            for c in range(cin):
                                acc += x[iy, ix, c] * w[i, j, c, oc]
                out[oy, ox, oc] = acc + (bias[oc] if bias is not None else 0.0)
    return out


def depthwise_loop(x, w, bias=None, stride=1, padding="same"):
    """Reference per-channel convolution. w (kh,kw,c)."""
    h, wd, c = x.shape
    kh, kw, c2 = w.shape
    assert c == c2
    if padding == "same":
        oh, pt = _same_geometry(h, kh, stride)
        ow, pl = _same_geometry(wd, kw, stride)
    else:
        oh = (h - kh) // stride + 1
        ow = (wd - kw) // stride + 1
        pt = pl = 0
    out = np.zeros((oh, ow, c), dtype=x.dtype)
    for oy in range(oh):
        for ox in range(ow):
            for ch in range(c):
                acc = 0.0
                for i in range(kh):
                    for j in range(kw):
                        iy = oy * stride - pt + i
                        ix = ox * stride - pl + j
                        if 0 <= iy < h and 0 <= ix < wd:
                            acc += x[iy, ix, ch] * w[i, j, ch]
                out[oy, ox, ch] = acc + (bias[ch] if bias is not None else 0.0)
    return out


def transposed_loop(x, w, bias=None, stride=2):
    """Reference transposed conv: gather form of the scatter definition.

    y[p,q,o] = sum over (a,b,i,j) with p = stride*a + i - pad_top and
    q = stride*b + j - pad_left of x[a,b,c] * w[i,j,c,o], where the pads
    crop max(k - stride, 0) split low/high.
    """
    h, wd, cin = x.shape
    kh, kw, cin2, cout = w.shape
    assert cin == cin2
    oh, ow = h * stride, wd * stride
    pt = max(kh - stride, 0) // 2
    pl = max(kw - stride, 0) // 2
    out = np.zeros((oh, ow, cout), dtype=x.dtype)
    for p in range(oh):
        for q in range(ow):
            for oc in range(cout):
                acc = 0.0
                for i in range(kh):
                    for j in range(kw):
                        ay, rem_y = divmod(p + pt - i, stride)
                        ax, rem_x = divmod(q + pl - j, stride)
                        if rem_y == 0 and rem_x == 0 and 0 <= ay < h and 0 <= ax < wd:
                            for c in range(cin):
                                acc += x[ay, ax, c] * w[i, j, c, oc]
                out[p, q, oc] = acc + (bias[oc] if bias is not None else 0.0)
    return out


def maxpool_loop(x, size=2, stride=1):
    """Reference stride-s same-padded max pool."""
    h, wd, c = x.shape
    oh, pt = _same_geometry(h, size, stride)
    ow, pl = _same_geometry(wd, size, stride)
    out = np.full((oh, ow, c), -np.inf, dtype=x.dtype)
    for oy in range(oh):
        for ox in range(ow):
            for ch in range(c):
                best = -np.inf
                for i in range(size):
                    for j in range(size):
                        iy = oy * stride - pt + i
                        ix = ox * stride - pl + j
                        if 0 <= iy < h and 0 <= ix < wd:
                            best = max(best, x[iy, ix, ch])
                out[oy, ox, ch] = best
    return out


def bce_loop(pred, target, clamp=1e-7):
    p = np.clip(np.asarray(pred, dtype=np.float64), clamp, 1 - clamp)
    t = np.asarray(target, dtype=np.float64)
    total = 0.0
    for pv, tv in zip(p.ravel(), t.ravel()):
        total += -(tv * np.log(pv) + (1 - tv) * np.log(1 - pv))
    return total / p.size


def cosine_loop(a, b):
    va = np.asarray(a, dtype=np.float64).ravel()
    vb = np.asarray(b, dtype=np.float64).ravel()
    na = np.sqrt((va * va).sum())
    nb = np.sqrt((vb * vb).sum())
    if na == 0 or nb == 0:
        return 0.0
    return float((va * vb).sum() / (na * nb))


def ccorr_normed_loop(image, template):
    """Naive normalized cross-correlation scan, joint over channels."""
    h, w, c = image.shape
    th, tw, tc = template.shape
    assert c == tc
    oh, ow = h - th + 1, w - tw + 1
    out = np.zeros((oh, ow), dtype=np.float64)
    t = template.astype(np.float64)
    st2 = (t * t).sum()
    for y in range(oh):
        for x in range(ow):
            win = image[y:y + th, x:x + tw].astype(np.float64)
            num = (win * t).sum()
            den = np.sqrt((win * win).sum() * st2)
            out[y, x] = 0.0 if den == 0 else num / den
    return out


def ccoeff_normed_loop(image, template):
    """Naive Pearson template scan with a single mean over pixels*channels."""
    h, w, c = image.shape
    th, tw, tc = template.shape
    assert c == tc
    oh, ow = h - th + 1, w - tw + 1
    t = template.astype(np.float64)
    t = t - t.mean()
    st2 = (t * t).sum()
    out = np.zeros((oh, ow), dtype=np.float64)
    for y in range(oh):
        for x in range(ow):
            win = image[y:y + th, x:x + tw].astype(np.float64)
            win = win - win.mean()
            den = np.sqrt((win * win).sum() * st2)
            num = (win * t).sum()
            out[y, x] = 0.0 if den == 0 else num / den
    return out


def flood_components(mask):
    """4-connected component labels via an explicit stack fill.

    Returns (labels, n) with labels >= 1 on mask pixels, 0 elsewhere.
    """
    h, w = mask.shape
    labels = np.zeros((h, w), dtype=int)
    n = 0
    for sy in range(h):
        for sx in range(w):
            if mask[sy, sx] and labels[sy, sx] == 0:
                n += 1
                todo = [(sy, sx)]
                labels[sy, sx] = n
                while todo:
                    y, x = todo.pop()
                    for ny, nx in ((y - 1, x), (y + 1, x), (y, x - 1), (y, x + 1)):
                        if 0 <= ny < h and 0 <= nx < w and mask[ny, nx] and labels[ny, nx] == 0:
                            labels[ny, nx] = n
                            todo.append((ny, nx))
    return labels, n


def best_component_box(probs, threshold=0.5):
    """Tight box of the above-threshold component with the largest summed
    probability; falls back to the single argmax pixel when nothing passes."""
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim == 3:
        p = p[:, :, 0]
    mask = p > threshold
    labels, n = flood_components(mask)
    if n == 0:
        flat = int(p.argmax())
        y, x = divmod(flat, p.shape[1])
        return (x, y, x, y)
    best, best_mass = 0, -1.0
    for k in range(1, n + 1):
        mass = p[labels == k].sum()
        if mass > best_mass:
            best, best_mass = k, mass
    ys, xs = np.nonzero(labels == best)
    return (int(xs.min()), int(ys.min()), int(xs.max()), int(ys.max()))


def fd_gradient(f, x, eps=1e-6):
    """Central finite differences of scalar f at array x (same shape as x)."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.ravel()
    gf = g.ravel()
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + eps
        hi = f(x)
        flat[i] = keep - eps
        lo = f(x)
        flat[i] = keep
        gf[i] = (hi - lo) / (2 * eps)
    return g


def rel_err(got, ref):
    """Max absolute difference, normalized by the reference magnitude."""
    got = np.asarray(got, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    scale = max(np.abs(ref).max() if ref.size else 0.0, 1e-12)
    return float(np.abs(got - ref).max() / scale)
