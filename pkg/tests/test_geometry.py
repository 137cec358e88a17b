"""Box arithmetic checked against pixel-set enumeration."""

import numpy as np
import pytest

from pagedet.geometry import (
    BBox,
    expand,
    intersection_area,
    iou,
    reading_order_key,
    union_bbox,
)


def pixel_set(b: BBox) -> set:
    """Every integer pixel covered by a half-open box."""
    return {(x, y) for x in range(b.x0, b.x1) for y in range(b.y0, b.y1)}


def iou_oracle(a: BBox, b: BBox) -> float:
    sa, sb = pixel_set(a), pixel_set(b)
    inter = len(sa & sb)
    union = len(sa | sb)
    return inter / union


def test_bbox_rejects_degenerate_and_negative_boxes():
    with pytest.raises(ValueError):
        BBox(5, 0, 5, 10)
    with pytest.raises(ValueError):
        BBox(6, 0, 5, 10)
    with pytest.raises(ValueError):
        BBox(-1, 0, 5, 10)
    with pytest.raises(ValueError):
        BBox(0, 4, 5, 4)


def test_bbox_dimensions_and_area():
    b = BBox(2, 3, 7, 11)
    assert b.width == 5
    assert b.height == 8
    assert b.area == 40
    assert b.area == len(pixel_set(b))


def test_intersection_area_matches_pixel_enumeration():
    rng = np.random.default_rng(7)
    for _ in range(200):
        x0, y0 = rng.integers(0, 20, size=2)
        a = BBox(int(x0), int(y0), int(x0 + rng.integers(1, 15)), int(y0 + rng.integers(1, 15)))
        x0, y0 = rng.integers(0, 20, size=2)
        b = BBox(int(x0), int(y0), int(x0 + rng.integers(1, 15)), int(y0 + rng.integers(1, 15)))
        assert intersection_area(a, b) == len(pixel_set(a) & pixel_set(b))


def test_iou_matches_pixel_enumeration():
    rng = np.random.default_rng(11)
    for _ in range(200):
        x0, y0 = rng.integers(0, 20, size=2)
        a = BBox(int(x0), int(y0), int(x0 + rng.integers(1, 15)), int(y0 + rng.integers(1, 15)))
        x0, y0 = rng.integers(0, 20, size=2)
        b = BBox(int(x0), int(y0), int(x0 + rng.integers(1, 15)), int(y0 + rng.integers(1, 15)))
        assert iou(a, b) == pytest.approx(iou_oracle(a, b), abs=1e-12)


def test_iou_half_overlapping_squares_is_one_third():
    a = BBox(0, 0, 10, 10)
    b = BBox(5, 0, 15, 10)
    assert iou(a, b) == pytest.approx(1.0 / 3.0, abs=1e-12)
    assert iou_oracle(a, b) == pytest.approx(1.0 / 3.0, abs=1e-12)


def test_iou_identity_symmetry_and_disjoint():
    a = BBox(3, 4, 9, 12)
    b = BBox(100, 4, 120, 12)
    assert iou(a, a) == 1.0
    assert iou(a, b) == 0.0
    c = BBox(5, 5, 12, 14)
    assert iou(a, c) == iou(c, a)


def test_tangent_boxes_share_no_pixels():
    a = BBox(0, 0, 10, 10)
    b = BBox(10, 0, 20, 10)
    assert intersection_area(a, b) == 0
    assert iou(a, b) == 0.0


def test_union_bbox_example():
    assert union_bbox(BBox(1, 2, 3, 4), BBox(0, 5, 2, 9)) == BBox(0, 2, 3, 9)


def test_union_bbox_contains_both_inputs():
    rng = np.random.default_rng(13)
    for _ in range(50):
        x0, y0 = rng.integers(0, 20, size=2)
        a = BBox(int(x0), int(y0), int(x0 + rng.integers(1, 15)), int(y0 + rng.integers(1, 15)))
        x0, y0 = rng.integers(0, 20, size=2)
        b = BBox(int(x0), int(y0), int(x0 + rng.integers(1, 15)), int(y0 + rng.integers(1, 15)))
        u = union_bbox(a, b)
        assert u.contains(a) and u.contains(b)
        assert pixel_set(u) >= pixel_set(a) | pixel_set(b)


def test_contains_and_translate():
    a = BBox(2, 2, 8, 8)
    assert a.contains(BBox(3, 3, 7, 7))
    assert not a.contains(BBox(3, 3, 9, 7))
    assert a.translate(10, -2) == BBox(12, 0, 18, 6)


def test_expand_clamps_to_page():
    b = BBox(5, 5, 10, 10)
    assert expand(b, 3, 100, 100) == BBox(2, 2, 13, 13)
    assert expand(b, 10, 100, 100) == BBox(0, 0, 20, 20)
    assert expand(b, 10, 12, 12) == BBox(0, 0, 12, 12)
    with pytest.raises(ValueError):
        expand(b, -1, 100, 100)


def test_list_round_trip():
    b = BBox(1, 2, 3, 4)
    assert b.to_list() == [1, 2, 3, 4]
    assert BBox.from_list([1, 2, 3, 4]) == b


def test_reading_order_sorts_top_to_bottom_then_left_to_right():
    boxes = [BBox(50, 10, 60, 20), BBox(0, 10, 10, 20), BBox(0, 0, 10, 5)]
    ordered = sorted(boxes, key=reading_order_key)
    assert ordered == [BBox(0, 0, 10, 5), BBox(0, 10, 10, 20), BBox(50, 10, 60, 20)]
