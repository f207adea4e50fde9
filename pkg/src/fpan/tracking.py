"""Frame-to-frame tracking built on top of a single-image localizer.

The tracker is deliberately simple: around the previous box it crops a
search region twice the box size, resizes it to the localizer's input
resolution, runs the localizer there, and maps the answer back to frame
coordinates.  The query is re-cut every step from the previous frame at
the previous result box, so the template follows appearance changes;
the price is that a bad box poisons the next query, which is why the
metrics below score whole tracks rather than single frames.

Coordinates move between frame and region through RegionTransform.  The
two directions are exact inverses over the reals (pixel edges map to
pixel edges), which makes the protocol testable: a localizer that
answers with the transformed ground truth must reproduce the ground
truth track bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .boxes import BoundingBox, center_distance, iou
from .errors import ShapeError
from .synth import SceneSample, resize_bilinear

# region localizers see the resized crop, the shared query, and the
# transform back to frame coordinates (handy for oracles, ignorable)
RegionLocalizer = Callable[[np.ndarray, np.ndarray, "RegionTransform"],
                           BoundingBox | tuple]

SUCCESS_TAUS = tuple(round(0.05 * i, 2) for i in range(21))


@dataclass(frozen=True)
class RegionTransform:
    """Affine map between frame pixels and a resized crop's pixels.

    The crop covers frame columns [x0, x0 + width) scaled onto
    [0, out_w), rows likewise.  Boxes transform by their pixel edges,
    so box_to_frame(box_to_region(b)) == b for any integer box inside
    the crop.
    """
    x0: int
    y0: int
    width: int
    height: int
    out_w: int
    out_h: int

    @property
    def sx(self) -> float:
        return self.out_w / self.width

    @property
    def sy(self) -> float:
        return self.out_h / self.height

    def box_to_region(self, box: BoundingBox) -> tuple[float, float, float, float]:
        """Frame box -> region coords (floats, inclusive pixel convention)."""
        rx0 = (box.x0 - self.x0) * self.sx
        ry0 = (box.y0 - self.y0) * self.sy
        rx1 = (box.x1 + 1 - self.x0) * self.sx - 1.0
        ry1 = (box.y1 + 1 - self.y0) * self.sy - 1.0
        return (rx0, ry0, rx1, ry1)

    def box_to_frame(self, box) -> BoundingBox:
        """Region box (BoundingBox or 4 numbers) -> integer frame box."""
        if isinstance(box, BoundingBox):
            rx0, ry0, rx1, ry1 = box.x0, box.y0, box.x1, box.y1
        else:
            rx0, ry0, rx1, ry1 = box
        fx0 = round(rx0 / self.sx + self.x0)
        fy0 = round(ry0 / self.sy + self.y0)
        fx1 = round((rx1 + 1.0) / self.sx + self.x0) - 1
        fy1 = round((ry1 + 1.0) / self.sy + self.y0) - 1
        return BoundingBox(fx0, fy0, max(fx1, fx0), max(fy1, fy0))


def _span(center: float, want: int, limit: int) -> tuple[int, int]:
    """Integer span of length min(want, limit) containing the center."""
    want = min(want, limit)
    lo = int(round(center - want / 2.0))
    lo = min(max(lo, 0), limit - want)
    return lo, want


def crop_region(frame: np.ndarray, box: BoundingBox, out_size: int,
                scale: float = 2.0,
                min_side: int = 8) -> tuple[np.ndarray, RegionTransform]:
    """Cut a search region around a box and resize it to out_size square."""
    frame = np.asarray(frame, dtype=np.float32)
    if frame.ndim != 3:
        raise ShapeError(f"frame must be (H, W, C), got {frame.shape}")
    fh, fw = frame.shape[:2]
    cx, cy = box.center
    x0, w = _span(cx, max(min_side, int(round(box.width * scale))), fw)
    y0, h = _span(cy, max(min_side, int(round(box.height * scale))), fh)
    crop = frame[y0:y0 + h, x0:x0 + w]
    region = resize_bilinear(crop, out_size, out_size)
    return region, RegionTransform(x0, y0, w, h, out_size, out_size)


def _enforce_min_box(box: BoundingBox, min_side: int, fw: int,
                     fh: int) -> BoundingBox:
    if box.width >= min_side and box.height >= min_side:
        return box
    cx, cy = box.center
    x0, w = _span(cx, max(box.width, min_side), fw)
    y0, h = _span(cy, max(box.height, min_side), fh)
    return BoundingBox(x0, y0, x0 + w - 1, y0 + h - 1)


def cut_query(frame: np.ndarray, box: BoundingBox,
              query_size: int) -> np.ndarray:
    frame = np.asarray(frame, dtype=np.float32)
    b = box.clamped(frame.shape[1], frame.shape[0])
    patch = frame[b.y0:b.y1 + 1, b.x0:b.x1 + 1]
    return resize_bilinear(patch, query_size, query_size)


def track_sequence(localizer: RegionLocalizer, frames: Sequence[np.ndarray],
                   init_box: BoundingBox, model_input: int = 64,
                   query_size: int = 28, min_box: int = 8,
                   region_scale: float = 2.0) -> list[BoundingBox]:
    """One-pass tracking; returns one box per frame, the first being init.

    Each step cuts the query from the PREVIOUS frame at the previous
    result box and searches a region_scale crop of the current frame
    around that box.  Degenerate boxes are expanded to min_box per side
    before cropping; the stored track keeps the localizer's answer.
    """
    if len(frames) == 0:
        raise ShapeError("empty frame sequence")
    first = np.asarray(frames[0], dtype=np.float32)
    fh, fw = first.shape[:2]
    track = [init_box.clamped(fw, fh)]
    prev = first
    for frame in frames[1:]:
        src = _enforce_min_box(track[-1], min_box, fw, fh)
        query = cut_query(prev, src, query_size)
        region, tf = crop_region(frame, src, model_input,
                                 scale=region_scale, min_side=min_box)
        found = localizer(region, query, tf)
        track.append(tf.box_to_frame(found).clamped(fw, fh))
        prev = frame
    return track


def make_tracking_samples(frames: Sequence[SceneSample], model_input: int = 64,
                          query_size: int = 28,
                          region_scale: float = 2.0) -> list[SceneSample]:
    """Teacher-forced region/query pairs from consecutive annotated frames.

    Each consecutive frame pair becomes one sample: the query is cut from
    frame t at its TRUE box and the region from frame t+1 around the same
    box, so the samples probe exactly what a non-drifting tracker would
    see.  Ground truth is the next frame's box in region coordinates.
    """
    if len(frames) < 2:
        raise ShapeError("need at least two frames")
    out = []
    for t in range(len(frames) - 1):
        nxt = frames[t + 1]
        query = cut_query(frames[t].image, frames[t].gt_box, query_size)
        region, tf = crop_region(nxt.image, frames[t].gt_box, model_input,
                                 scale=region_scale)
        rx0, ry0, rx1, ry1 = tf.box_to_region(nxt.gt_box)
        gx0 = min(max(int(round(rx0)), 0), model_input - 1)
        gy0 = min(max(int(round(ry0)), 0), model_input - 1)
        gx1 = min(max(int(round(rx1)), gx0), model_input - 1)
        gy1 = min(max(int(round(ry1)), gy0), model_input - 1)
        out.append(SceneSample(region, query,
                               BoundingBox(gx0, gy0, gx1, gy1),
                               digit=nxt.digit, color=nxt.color, index=t + 1))
    return out


@dataclass(frozen=True)
class TrackingMetrics:
    mean_iou: float
    precision: float     # fraction of frames with center error <= threshold
    success_auc: float   # mean success rate over IOU taus 0, 0.05, ..., 1
    precision_threshold: float
    n_frames: int


def tracking_metrics(pred: Sequence[BoundingBox], gt: Sequence[BoundingBox],
                     precision_threshold: float = 20.0) -> TrackingMetrics:
    if len(pred) != len(gt):
        raise ShapeError(f"length mismatch: {len(pred)} predictions, "
                         f"{len(gt)} ground-truth boxes")
    if len(pred) == 0:
        raise ShapeError("no frames to score")
    ious = np.array([iou(p, g) for p, g in zip(pred, gt)])
    dists = np.array([center_distance(p, g) for p, g in zip(pred, gt)])
    success = float(np.mean([(ious >= t).mean() for t in SUCCESS_TAUS]))
    return TrackingMetrics(float(ious.mean()),
                           float((dists <= precision_threshold).mean()),
                           success, precision_threshold, len(pred))


def fpan_region_localizer(model) -> RegionLocalizer:
    """Adapt a trained network to the tracking interface (transform unused)."""
    from . import tensor as T

    size = model.cfg.input_size

    def run(region: np.ndarray, query: np.ndarray,
            tf: RegionTransform) -> BoundingBox:
        if region.shape[0] != size or region.shape[1] != size:
            region = resize_bilinear(region, size, size)
        qsize = model.cfg.query_size
        if query.shape[:2] != (qsize, qsize):
            query = resize_bilinear(query, qsize, qsize)
        box, _ = model.localize(T.Tensor(np.asarray(region, dtype=np.float32)),
                                T.Tensor(np.asarray(query, dtype=np.float32)))
        return box

    return run


def baseline_region_localizer(method: str = "ccoeff",
                              rerank: bool = True) -> RegionLocalizer:
    from .baselines import baseline_localize

    def run(region: np.ndarray, query: np.ndarray,
            tf: RegionTransform) -> BoundingBox:
        return baseline_localize(region, query, method=method, rerank=rerank)

    return run
