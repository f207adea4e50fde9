"""Localization evaluation: per-sample IOU records, summary metrics, curves.

A localizer is any callable (image, query) -> BoundingBox, with both arrays
float RGB in [0, 1].  Per-sample wall time is the median of a few repeated
calls so one scheduler hiccup cannot skew the report.

Metrics follow the usual localization conventions: ALP is the percentage of
samples whose IOU clears the threshold, AIOU averages IOU over those
successes only (0 when nothing succeeds), and the precision curve sweeps
the threshold from 0 to 1 in 0.05 steps, inclusive at each tau.
"""

from __future__ import annotations

import statistics
import time
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .boxes import BoundingBox, iou
from .errors import ShapeError
from .baselines import baseline_localize
from .synth import SceneSample, resize_bilinear

Localizer = Callable[[np.ndarray, np.ndarray], BoundingBox]

CURVE_TAUS = tuple(round(0.05 * i, 2) for i in range(21))


@dataclass(frozen=True)
class EvalRecord:
    index: int
    iou: float
    time_s: float
    success: bool


@dataclass(frozen=True)
class EvalReport:
    records: tuple[EvalRecord, ...]
    iou_threshold: float

    def __len__(self) -> int:
        return len(self.records)

    @property
    def alp(self) -> float:
        """Percentage of samples localized with IOU >= threshold."""
        if not self.records:
            return 0.0
        return 100.0 * sum(r.success for r in self.records) / len(self.records)

    @property
    def aiou(self) -> float:
        """Mean IOU over successful samples only; 0 when none succeed."""
        good = [r.iou for r in self.records if r.success]
        if not good:
            return 0.0
        return float(np.mean(good))

    @property
    def mean_time_s(self) -> float:
        if not self.records:
            return 0.0
        return float(np.mean([r.time_s for r in self.records]))


def evaluate(localizer: Localizer, samples: Sequence[SceneSample],
             iou_threshold: float = 0.5, repeats: int = 3) -> EvalReport:
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    records = []
    for sample in samples:
        times = []
        box = None
        for _ in range(repeats):
            t0 = time.perf_counter()
            box = localizer(sample.image, sample.query)
            times.append(time.perf_counter() - t0)
        overlap = iou(box, sample.gt_box)
        records.append(EvalRecord(sample.index, overlap,
                                  statistics.median(times),
                                  overlap >= iou_threshold))
    return EvalReport(tuple(records), iou_threshold)


def precision_curve(report: EvalReport,
                    taus: Sequence[float] = CURVE_TAUS) -> list[tuple[float, float]]:
    """(tau, fraction of samples with IOU >= tau) for each tau."""
    if not report.records:
        return [(float(t), 0.0) for t in taus]
    ious = np.array([r.iou for r in report.records])
    return [(float(t), float((ious >= t).mean())) for t in taus]


def write_report_csv(path, report: EvalReport) -> None:
    lines = ["sample,iou,time_s,success"]
    for r in report.records:
        lines.append(f"{r.index},{r.iou:.6f},{r.time_s:.6f},{int(r.success)}")
    lines.append(f"# alp={report.alp:.4f} aiou={report.aiou:.6f} "
                 f"mean_time_s={report.mean_time_s:.6f} "
                 f"iou_threshold={report.iou_threshold}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def write_curve_csv(path, curve: Sequence[tuple[float, float]]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("tau,precision\n")
        for tau, prec in curve:
            fh.write(f"{tau:.2f},{prec:.6f}\n")


_SVG_COLORS = ("#d62728", "#1f77b4", "#2ca02c", "#9467bd", "#ff7f0e")


def write_curve_svg(path, curves: dict[str, Sequence[tuple[float, float]]]) -> None:
    """Tiny static SVG: precision vs IOU threshold, one polyline per label."""
    w, h, m = 480, 320, 42
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" '
             f'viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="11">',
             f'<rect width="{w}" height="{h}" fill="white"/>',
             f'<line x1="{m}" y1="{h - m}" x2="{w - m}" y2="{h - m}" '
             'stroke="black"/>',
             f'<line x1="{m}" y1="{m}" x2="{m}" y2="{h - m}" stroke="black"/>']
    for frac in (0.0, 0.5, 1.0):
        x = m + frac * (w - 2 * m)
        y = h - m - frac * (h - 2 * m)
        parts.append(f'<text x="{x - 6:.0f}" y="{h - m + 14}">{frac:.1f}</text>')
        parts.append(f'<text x="{m - 28}" y="{y + 4:.0f}">{frac:.1f}</text>')
    parts.append(f'<text x="{w // 2 - 40}" y="{h - 8}">IOU threshold</text>')
    for i, (label, curve) in enumerate(sorted(curves.items())):
        color = _SVG_COLORS[i % len(_SVG_COLORS)]
        pts = " ".join(
            f"{m + tau * (w - 2 * m):.1f},{h - m - prec * (h - 2 * m):.1f}"
            for tau, prec in curve)
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" '
                     'stroke-width="1.5"/>')
        parts.append(f'<text x="{w - m - 120}" y="{m + 14 * i + 4}" '
                     f'fill="{color}">{label}</text>')
    parts.append("</svg>")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(parts) + "\n")


def fpan_localizer(model) -> Localizer:
    """Wrap a trained localization network as an (image, query) -> box call."""
    size = model.cfg.input_size
    qsize = model.cfg.query_size

    def run(image: np.ndarray, query: np.ndarray) -> BoundingBox:
        img = np.asarray(image, dtype=np.float32)
        qry = np.asarray(query, dtype=np.float32)
        if img.shape != (size, size, model.cfg.in_channels):
            raise ShapeError(f"expected {size}x{size} image, got {img.shape}")
        if qry.shape[:2] != (qsize, qsize):
            qry = resize_bilinear(qry, qsize, qsize)
        box, _ = model.localize(T.Tensor(img), T.Tensor(qry))
        return box

    return run


def baseline_localizer(method: str = "ccoeff", rerank: bool = True,
                       k: int = 5) -> Localizer:
    def run(image: np.ndarray, query: np.ndarray) -> BoundingBox:
        return baseline_localize(image, query, method=method, k=k, rerank=rerank)

    return run


def attention_mass_fractions(model, sample: SceneSample) -> list[float]:
    """Share of each attention map's mass inside the sample's true box.

    One value per pyramid level, coarse maps projected onto the image grid
    with outward rounding, in network order (level 0 first).
    """
    from .upsampler import box_mass_fraction

    fwd = model.forward(T.Tensor(np.asarray(sample.image, dtype=np.float32)),
                        T.Tensor(np.asarray(sample.query, dtype=np.float32)))
    return [box_mass_fraction(att.data[:, :, 0], sample.gt_box,
                              model.cfg.input_size)
            for att in fwd.pyramid.maps]
