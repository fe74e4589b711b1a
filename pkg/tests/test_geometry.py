import math

import numpy as np
import pytest

from bev_domain_adapt.models import Box3D
from bev_domain_adapt.utils.geometry import (
    bev_corners,
    bev_intersection_area,
    iou_3d,
    iou_matrix,
    points_in_box,
    polygon_area,
    polygon_clip,
)


def test_bev_corners_are_counter_clockwise():
    corners = bev_corners(Box3D(center=(1.0, 2.0, 0.0), size=(4.0, 2.0, 1.0), yaw=0.3))
    x, y = corners[:, 0], corners[:, 1]
    signed = 0.5 * (np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))
    assert signed == pytest.approx(8.0)


def test_intersection_of_identical_rectangles():
    box = Box3D(center=(0.0, 0.0, 0.0), size=(2.0, 4.0, 1.0))
    assert bev_intersection_area(box, box) == pytest.approx(8.0)


def test_intersection_of_disjoint_rectangles():
    a = Box3D(center=(0.0, 0.0, 0.0), size=(2.0, 4.0, 1.0))
    b = Box3D(center=(10.0, 0.0, 0.0), size=(2.0, 4.0, 1.0))
    assert bev_intersection_area(a, b) == 0.0


def test_square_and_rotated_square_form_an_octagon():
    a = Box3D(center=(0.0, 0.0, 0.0), size=(1.0, 1.0, 1.0))
    b = Box3D(center=(0.0, 0.0, 0.0), size=(1.0, 1.0, 1.0), yaw=math.pi / 4)
    assert bev_intersection_area(a, b) == pytest.approx(2.0 * (math.sqrt(2.0) - 1.0), abs=1e-9)


def test_intersection_matches_monte_carlo(rng):
    a = Box3D(center=(0.3, -0.2, 0.0), size=(3.0, 1.5, 1.0), yaw=0.4)
    b = Box3D(center=(-0.5, 0.4, 0.0), size=(2.5, 2.0, 1.0), yaw=-1.1)
    samples = np.column_stack([rng.uniform(-3, 3, size=(1_000_000, 2)), np.zeros(1_000_000)])
    inside = points_in_box(samples, a) & points_in_box(samples, b)
    estimate = inside.mean() * 36.0
    assert bev_intersection_area(a, b) == pytest.approx(estimate, abs=0.05)


def test_iou_of_identical_box_is_one():
    box = Box3D(center=(1.0, 1.0, 0.5), size=(4.0, 2.0, 1.5), yaw=1.0)
    assert iou_3d(box, box) == pytest.approx(1.0)


def test_iou_of_offset_unit_cubes():
    a = Box3D(center=(0.0, 0.0, 0.5), size=(1.0, 1.0, 1.0))
    b = Box3D(center=(0.5, 0.0, 0.5), size=(1.0, 1.0, 1.0))
    assert iou_3d(a, b) == pytest.approx(1.0 / 3.0)


def test_iou_without_vertical_overlap_is_zero():
    a = Box3D(center=(0.0, 0.0, 0.5), size=(1.0, 1.0, 1.0))
    b = Box3D(center=(0.0, 0.0, 3.0), size=(1.0, 1.0, 1.0))
    assert iou_3d(a, b) == 0.0


def test_iou_is_symmetric_and_yaw_periodic():
    a = Box3D(center=(0.0, 0.0, 0.5), size=(4.0, 2.0, 1.0), yaw=0.2)
    b = Box3D(center=(0.7, 0.3, 0.6), size=(3.5, 1.8, 1.2), yaw=0.5)
    assert iou_3d(a, b) == pytest.approx(iou_3d(b, a))
    assert iou_3d(a, Box3D(center=b.center, size=b.size, yaw=b.yaw + math.pi)) == pytest.approx(iou_3d(a, b))


def test_iou_matrix_shape():
    boxes = [Box3D(center=(float(i), 0.0, 0.5), size=(1.0, 1.0, 1.0)) for i in range(3)]
    assert iou_matrix(boxes, boxes[:2]).shape == (3, 2)


def test_polygon_clip_touching_edges_has_no_area():
    square = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)]
    neighbor = [(1.0, 0.0), (2.0, 0.0), (2.0, 1.0), (1.0, 1.0)]
    assert polygon_area(polygon_clip(square, neighbor)) == pytest.approx(0.0)


def test_yaw_is_normalized():
    assert Box3D(center=(0.0, 0.0, 0.0), size=(1.0, 1.0, 1.0), yaw=-math.pi).yaw == pytest.approx(math.pi)
    assert Box3D(center=(0.0, 0.0, 0.0), size=(1.0, 1.0, 1.0), yaw=3 * math.pi / 2).yaw == pytest.approx(-math.pi / 2)


def test_box_rejects_non_positive_size():
    with pytest.raises(ValueError):
        Box3D(center=(0.0, 0.0, 0.0), size=(1.0, 0.0, 1.0))


def _random_box(rng, spread=1.0):
    return Box3D(
        center=(float(rng.uniform(-spread, spread)), float(rng.uniform(-spread, spread)), float(rng.uniform(0.0, 0.6))),
        size=(float(rng.uniform(1.0, 3.0)), float(rng.uniform(0.8, 2.0)), float(rng.uniform(0.8, 1.8))),
        yaw=float(rng.uniform(-math.pi, math.pi)),
    )


def _aabb(box):
    corners = bev_corners(box)
    bottom, top = box.z_range
    return np.array([*corners.min(axis=0), bottom]), np.array([*corners.max(axis=0), top])


def test_iou_matches_monte_carlo_over_random_pairs(rng):
    samples = 200_000
    for _ in range(200):
        a, b = _random_box(rng), _random_box(rng)
        (a_low, a_high), (b_low, b_high) = _aabb(a), _aabb(b)
        low, high = np.maximum(a_low, b_low), np.minimum(a_high, b_high)
        if np.any(high <= low):
            assert iou_3d(a, b) == 0.0
            continue
        points = rng.uniform(low, high, size=(samples, 3))
        intersection = (points_in_box(points, a) & points_in_box(points, b)).mean() * np.prod(high - low)
        estimate = intersection / (a.volume + b.volume - intersection)
        assert iou_3d(a, b) == pytest.approx(estimate, abs=0.03)


def test_iou_is_invariant_to_translation_and_joint_rotation(rng):
    for _ in range(50):
        a, b = _random_box(rng), _random_box(rng)
        shift = rng.uniform(-20.0, 20.0, size=3)
        moved = [box.translated(*shift) for box in (a, b)]
        assert iou_3d(*moved) == pytest.approx(iou_3d(a, b), abs=1e-9)

        angle = float(rng.uniform(-math.pi, math.pi))
        c, s = math.cos(angle), math.sin(angle)

        def rotate(box):
            x, y, z = box.center
            return Box3D(center=(c * x - s * y, s * x + c * y, z), size=box.size, yaw=box.yaw + angle)

        assert iou_3d(rotate(a), rotate(b)) == pytest.approx(iou_3d(a, b), abs=1e-9)


def test_intersection_never_exceeds_the_smaller_footprint(rng):
    for _ in range(200):
        a, b = _random_box(rng), _random_box(rng)
        area = bev_intersection_area(a, b)
        assert 0.0 <= area <= min(a.bev_area, b.bev_area) + 1e-12
        assert 0.0 <= iou_3d(a, b) <= 1.0
