"""Template-matching baselines for query localization.

Two classical matchers over RGB images in [0, 1]:

  * normalized cross-correlation   score = <I, T> / (|I| |T|)
  * normalized correlation coefficient (Pearson): both the window and the
    template are centered by their scalar mean over all pixels and channels
    before the same normalized product.

Window sums come from integral images, so a full score map costs O(H W)
per statistic regardless of template size; only the raw cross term uses a
sliding-window product.  On top of the score map sits a small candidate
stage: take the best k positions with greedy IOU suppression, then rerank
them by joint color-histogram intersection against the template.  The
rerank recovers targets that share a shape with a distractor but not a
color, which is exactly where plain correlation goes wrong.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .boxes import BoundingBox, iou
from .errors import ShapeError

HIST_BINS = 8


def _as_rgb(img: np.ndarray, name: str) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        img = img[:, :, None]
    if img.ndim != 3:
        raise ShapeError(f"{name} must be (H, W, C), got {img.shape}")
    return img


def _window_sums(img: np.ndarray, th: int, tw: int) -> np.ndarray:
    """Sum of every th x tw window, pooled over channels, via integral image."""
    h, w, _ = img.shape
    ii = np.zeros((h + 1, w + 1), dtype=np.float64)
    ii[1:, 1:] = img.sum(axis=2).cumsum(axis=0).cumsum(axis=1)
    return (ii[th:, tw:] - ii[:-th, tw:] - ii[th:, :-tw] + ii[:-th, :-tw])


def _cross_term(img: np.ndarray, tpl: np.ndarray) -> np.ndarray:
    windows = sliding_window_view(img, tpl.shape[:2], axis=(0, 1))
    # windows: (oh, ow, C, th, tw); template: (th, tw, C)
    return np.einsum("yxcij,ijc->yx", windows, tpl, optimize=True)


def _check_fits(img: np.ndarray, tpl: np.ndarray) -> None:
    if tpl.shape[0] > img.shape[0] or tpl.shape[1] > img.shape[1]:
        raise ShapeError(
            f"template {tpl.shape[:2]} larger than image {img.shape[:2]}")
    if tpl.shape[2] != img.shape[2]:
        raise ShapeError(
            f"channel mismatch: image {img.shape[2]}, template {tpl.shape[2]}")


def match_ccorr_normed(image: np.ndarray, template: np.ndarray) -> np.ndarray:
    """Normalized cross-correlation score map over all valid placements."""
    img = _as_rgb(image, "image")
    tpl = _as_rgb(template, "template")
    _check_fits(img, tpl)
    th, tw, _ = tpl.shape
    num = _cross_term(img, tpl)
    sq = _window_sums(img * img, th, tw)
    denom = np.sqrt(np.maximum(sq, 0.0) * (tpl * tpl).sum())
    out = np.zeros_like(num)
    np.divide(num, denom, out=out, where=denom > 1e-12)
    return out


def match_ccoeff_normed(image: np.ndarray, template: np.ndarray) -> np.ndarray:
    """Pearson correlation score map; flat windows or templates score 0."""
    img = _as_rgb(image, "image")
    tpl = _as_rgb(template, "template")
    _check_fits(img, tpl)
    th, tw, c = tpl.shape
    n = th * tw * c
    tc = tpl - tpl.mean()
    tvar = (tc * tc).sum()
    num = _cross_term(img, tc)  # window mean drops out: sum(tc) == 0
    wsum = _window_sums(img, th, tw)
    wsq = _window_sums(img * img, th, tw)
    ivar = np.maximum(wsq - wsum * wsum / n, 0.0)
    denom = np.sqrt(ivar * tvar)
    out = np.zeros_like(num)
    np.divide(num, denom, out=out, where=denom > 1e-12)
    return out


MATCHERS = {"ccorr": match_ccorr_normed, "ccoeff": match_ccoeff_normed}


@dataclass(frozen=True)
class Candidate:
    box: BoundingBox
    score: float        # matcher score at this placement
    hist: float = 0.0   # histogram intersection, filled by the rerank


def top_candidates(scores: np.ndarray, template_shape: tuple[int, int],
                   k: int = 5, suppress_iou: float = 0.3) -> list[Candidate]:
    """Greedy top-k peaks; later picks must not overlap kept boxes > IOU cap."""
    th, tw = template_shape
    grid = np.array(scores, dtype=np.float64)
    oh, ow = grid.shape
    ys, xs = np.meshgrid(np.arange(oh), np.arange(ow), indexing="ij")
    picked: list[Candidate] = []
    for _ in range(k):
        idx = int(np.argmax(grid))
        y, x = divmod(idx, ow)
        if not np.isfinite(grid[y, x]):
            break
        picked.append(Candidate(
            BoundingBox(x, y, x + tw - 1, y + th - 1), float(grid[y, x])))
        # suppress every placement too close to this pick (same-size boxes)
        inter = np.clip(tw - np.abs(xs - x), 0, None) * np.clip(
            th - np.abs(ys - y), 0, None)
        overlap = inter / (2.0 * th * tw - inter)
        grid[overlap > suppress_iou] = -np.inf
        grid[y, x] = -np.inf
    return picked


def color_histogram(region: np.ndarray, bins: int = HIST_BINS) -> np.ndarray:
    """Joint RGB histogram (bins^3,), L1-normalized; empty regions are uniform."""
    reg = _as_rgb(region, "region")
    if reg.shape[2] != 3:
        raise ShapeError(f"histogram needs 3 channels, got {reg.shape[2]}")
    q = np.clip((reg * bins).astype(np.int64), 0, bins - 1)
    flat = (q[:, :, 0] * bins + q[:, :, 1]) * bins + q[:, :, 2]
    hist = np.bincount(flat.ravel(), minlength=bins ** 3).astype(np.float64)
    total = hist.sum()
    if total == 0:
        return np.full(bins ** 3, 1.0 / bins ** 3)
    return hist / total


def histogram_intersection(h1: np.ndarray, h2: np.ndarray) -> float:
    if h1.shape != h2.shape:
        raise ShapeError(f"histogram shapes differ: {h1.shape} vs {h2.shape}")
    return float(np.minimum(h1, h2).sum())


def crop_to_ink(template: np.ndarray, tol: float = 1e-3) -> np.ndarray:
    """Trim black margins; a template with no ink is returned unchanged."""
    tpl = np.asarray(template)
    mask = tpl.max(axis=2) > tol if tpl.ndim == 3 else tpl > tol
    ys, xs = np.nonzero(mask)
    if len(ys) == 0:
        return tpl
    return tpl[ys.min():ys.max() + 1, xs.min():xs.max() + 1]


def _ink_histogram(region: np.ndarray, bins: int) -> np.ndarray:
    """Color histogram with the near-black bin dropped and renormalized.

    Background pixels land in bin (0,0,0); counting them would rank
    candidates by how much black they contain instead of by ink color.
    """
    hist = color_histogram(region, bins=bins).copy()
    hist[0] = 0.0
    total = hist.sum()
    if total == 0:
        return np.full(hist.size, 1.0 / hist.size)
    return hist / total


def match_and_rerank(image: np.ndarray, template: np.ndarray,
                     method: str = "ccoeff", k: int = 5,
                     suppress_iou: float = 0.3,
                     bins: int = HIST_BINS) -> tuple[BoundingBox, list[Candidate]]:
    """Score, pick top-k non-overlapping placements, rerank by ink color.

    Returns the winning box plus the candidate list in matcher order with
    hist scores filled in.  Ties on histogram intersection keep matcher order.
    """
    if method not in MATCHERS:
        raise ValueError(f"unknown matcher {method!r}, expected one of "
                         f"{sorted(MATCHERS)}")
    img = _as_rgb(image, "image")
    tpl = _as_rgb(template, "template")
    scores = MATCHERS[method](img, tpl)
    raw = top_candidates(scores, tpl.shape[:2], k=k, suppress_iou=suppress_iou)
    if not raw:
        raise ShapeError("no valid placements: template does not fit image")
    tpl_hist = _ink_histogram(tpl, bins=bins)
    ranked = []
    for cand in raw:
        b = cand.box
        region = img[b.y0:b.y1 + 1, b.x0:b.x1 + 1]
        ranked.append(Candidate(b, cand.score,
                                histogram_intersection(
                                    _ink_histogram(region, bins=bins),
                                    tpl_hist)))
    best = max(range(len(ranked)), key=lambda i: (ranked[i].hist, -i))
    return ranked[best].box, ranked


def baseline_localize(image: np.ndarray, query: np.ndarray,
                      method: str = "ccoeff", k: int = 5,
                      rerank: bool = True) -> BoundingBox:
    """Full baseline: ink-crop the query, match, optionally rerank by color."""
    tpl = crop_to_ink(query)
    if rerank:
        box, _ = match_and_rerank(image, tpl, method=method, k=k)
        return box
    scores = MATCHERS[method](_as_rgb(image, "image"), _as_rgb(tpl, "template"))
    cands = top_candidates(scores, tpl.shape[:2], k=1)
    if not cands:
        raise ShapeError("no valid placements: template does not fit image")
    return cands[0].box
