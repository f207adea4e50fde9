"""Axis-aligned bounding boxes with inclusive pixel bounds.

A box (x0, y0, x1, y1) covers every pixel with x0 <= x <= x1 and
y0 <= y <= y1, so a single pixel is the box (x, y, x, y) with area 1.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import ShapeError


@dataclass(frozen=True)
class BoundingBox:
    x0: int
    y0: int
    x1: int
    y1: int

    def __post_init__(self):
        if self.x1 < self.x0 or self.y1 < self.y0:
            raise ShapeError(f"empty box: {self}")

    @property
    def width(self) -> int:
        return self.x1 - self.x0 + 1

    @property
    def height(self) -> int:
        return self.y1 - self.y0 + 1

    @property
    def area(self) -> int:
        return self.width * self.height

    @property
    def center(self) -> tuple[float, float]:
        return ((self.x0 + self.x1) / 2.0, (self.y0 + self.y1) / 2.0)

    def clamped(self, width: int, height: int) -> "BoundingBox":
        """Clip to an image of the given size, keeping at least one pixel."""
        x0 = min(max(self.x0, 0), width - 1)
        y0 = min(max(self.y0, 0), height - 1)
        x1 = min(max(self.x1, x0), width - 1)
        y1 = min(max(self.y1, y0), height - 1)
        return BoundingBox(x0, y0, x1, y1)

    def shifted(self, dx: int, dy: int) -> "BoundingBox":
        return BoundingBox(self.x0 + dx, self.y0 + dy, self.x1 + dx, self.y1 + dy)


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection over union with inclusive pixel-count areas."""
    ix0 = max(a.x0, b.x0)
    iy0 = max(a.y0, b.y0)
    ix1 = min(a.x1, b.x1)
    iy1 = min(a.y1, b.y1)
    if ix1 < ix0 or iy1 < iy0:
        return 0.0
    inter = (ix1 - ix0 + 1) * (iy1 - iy0 + 1)
    union = a.area + b.area - inter
    return inter / union


def center_distance(a: BoundingBox, b: BoundingBox) -> float:
    ax, ay = a.center
    bx, by = b.center
    return ((ax - bx) ** 2 + (ay - by) ** 2) ** 0.5
