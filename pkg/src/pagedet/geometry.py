"""Axis-aligned rectangle arithmetic shared by proposals, neighbor finding and metrics.

Boxes are half-open integer pixel rectangles [x0, x1) x [y0, y1) with the origin at
the page top-left. Edge-tangent boxes do not intersect, so "no overlap" is testable
as IoU == 0 exactly.
"""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class BBox:
    """Half-open pixel rectangle: x0 <= x < x1, y0 <= y < y1."""

    x0: int
    y0: int
    x1: int
    y1: int

    def __post_init__(self):
        if not (0 <= self.x0 < self.x1 and 0 <= self.y0 < self.y1):
            raise ValueError(f"degenerate bbox ({self.x0},{self.y0},{self.x1},{self.y1})")

    @property
    def width(self) -> int:
        return self.x1 - self.x0

    @property
    def height(self) -> int:
        return self.y1 - self.y0

    @property
    def area(self) -> int:
        return self.width * self.height

    def contains(self, other: "BBox") -> bool:
        return (self.x0 <= other.x0 and self.y0 <= other.y0
                and other.x1 <= self.x1 and other.y1 <= self.y1)

    def translate(self, dx: int, dy: int) -> "BBox":
        return BBox(self.x0 + dx, self.y0 + dy, self.x1 + dx, self.y1 + dy)

    def to_list(self) -> list[int]:
        """JSON form used everywhere in the repo: [x0, y0, x1, y1]."""
        return [self.x0, self.y0, self.x1, self.y1]

    @classmethod
    def from_list(cls, coords) -> "BBox":
        x0, y0, x1, y1 = (int(c) for c in coords)
        return cls(x0, y0, x1, y1)


def intersection_area(a: BBox, b: BBox) -> int:
    """Pixel count of the overlap; 0 when disjoint or merely edge-tangent."""
    w = min(a.x1, b.x1) - max(a.x0, b.x0)
    h = min(a.y1, b.y1) - max(a.y0, b.y0)
    if w <= 0 or h <= 0:
        return 0
    return w * h


def iou(a: BBox, b: BBox) -> float:
    """Intersection over union in [0, 1]; exact integer areas under the hood."""
    inter = intersection_area(a, b)
    if inter == 0:
        return 0.0
    union = a.area + b.area - inter
    return inter / union


def union_bbox(a: BBox, b: BBox) -> BBox:
    """Smallest box containing both inputs."""
    return BBox(min(a.x0, b.x0), min(a.y0, b.y0), max(a.x1, b.x1), max(a.y1, b.y1))


def expand(b: BBox, delta: int, page_w: int, page_h: int) -> BBox:
    """Grow every side outward by delta pixels, clamped to the page."""
    if delta < 0:
        raise ValueError("delta must be >= 0")
    return BBox(max(0, b.x0 - delta), max(0, b.y0 - delta),
                min(page_w, b.x1 + delta), min(page_h, b.y1 + delta))


def reading_order_key(b: BBox) -> tuple[int, int, int, int]:
    """Sort key: top-to-bottom, then left-to-right."""
    return (b.y0, b.x0, b.y1, b.x1)
