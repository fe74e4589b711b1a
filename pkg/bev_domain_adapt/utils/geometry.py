"""Oriented box geometry: BEV corners, convex polygon clipping and 3D IoU.

Boxes span ``[z - h/2, z + h/2]`` vertically (z is the box mid-height).
"""
import math

import numpy as np

from bev_domain_adapt.models.box import Box3D

# Tolerance for points lying on a clip edge, in meters.
EDGE_EPS = 1e-9


def bev_corners(box: Box3D) -> np.ndarray:
    """Returns the four BEV corners of ``box`` in counter-clockwise order, shape (4, 2)."""
    x, y, _ = box.center
    half_l, half_w = box.size[0] / 2.0, box.size[1] / 2.0
    local = np.array([[half_l, half_w], [-half_l, half_w], [-half_l, -half_w], [half_l, -half_w]])
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    rotation = np.array([[c, -s], [s, c]])
    return local @ rotation.T + np.array([x, y])


def polygon_area(polygon) -> float:
    """Shoelace area of a simple polygon given as a sequence of (x, y) points."""
    if len(polygon) < 3:
        return 0.0
    pts = np.asarray(polygon, dtype=np.float64)
    x, y = pts[:, 0], pts[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def polygon_clip(subject_polygon, clip_polygon) -> list[tuple[float, float]]:
    """Clips a polygon against a convex, counter-clockwise polygon (Sutherland-Hodgman).

    Args:
        subject_polygon: Sequence of (x, y) points, any simple polygon.
        clip_polygon: Sequence of (x, y) points, convex and counter-clockwise.

    Returns:
        list: Vertices of the intersection polygon; empty when they do not overlap.
    """

    def inside(p) -> bool:
        cross = (cp2[0] - cp1[0]) * (p[1] - cp1[1]) - (cp2[1] - cp1[1]) * (p[0] - cp1[0])
        return cross >= -EDGE_EPS

    def intersection(s, e) -> tuple[float, float]:
        dc = (cp1[0] - cp2[0], cp1[1] - cp2[1])
        dp = (s[0] - e[0], s[1] - e[1])
        denom = dc[0] * dp[1] - dc[1] * dp[0]
        if abs(denom) < EDGE_EPS:
            # segment runs along the clip edge
            return (float(e[0]), float(e[1]))
        n1 = cp1[0] * cp2[1] - cp1[1] * cp2[0]
        n2 = s[0] * e[1] - s[1] * e[0]
        return ((n1 * dp[0] - n2 * dc[0]) / denom, (n1 * dp[1] - n2 * dc[1]) / denom)

    output = [tuple(p) for p in subject_polygon]
    cp1 = clip_polygon[-1]
    for cp2 in clip_polygon:
        if not output:
            break
        candidates = output
        output = []
        s = candidates[-1]
        for e in candidates:
            if inside(e):
                if not inside(s):
                    output.append(intersection(s, e))
                output.append(e)
            elif inside(s):
                output.append(intersection(s, e))
            s = e
        cp1 = cp2
    return output


def bev_intersection_area(a: Box3D, b: Box3D) -> float:
    """Area in square meters of the overlap of two yaw-rotated BEV rectangles."""
    clipped = polygon_clip(bev_corners(a).tolist(), bev_corners(b).tolist())
    area = polygon_area(clipped)
    return min(area, a.bev_area, b.bev_area)


def vertical_overlap(a: Box3D, b: Box3D) -> float:
    a_bottom, a_top = a.z_range
    b_bottom, b_top = b.z_range
    return max(0.0, min(a_top, b_top) - max(a_bottom, b_bottom))


def iou_3d(a: Box3D, b: Box3D) -> float:
    """3D intersection over union of two oriented boxes, in [0, 1]."""
    height = vertical_overlap(a, b)
    if height <= 0.0:
        return 0.0
    intersection = bev_intersection_area(a, b) * height
    if intersection <= 0.0:
        return 0.0
    union = a.volume + b.volume - intersection
    return float(min(1.0, max(0.0, intersection / union)))


def iou_matrix(boxes_a: list[Box3D], boxes_b: list[Box3D]) -> np.ndarray:
    out = np.zeros((len(boxes_a), len(boxes_b)))
    for i, a in enumerate(boxes_a):
        for j, b in enumerate(boxes_b):
            out[i, j] = iou_3d(a, b)
    return out


def points_in_box(points: np.ndarray, box: Box3D) -> np.ndarray:
    """Boolean mask of the rows of ``points`` (P x >=3) lying inside ``box``."""
    if points.shape[0] == 0:
        return np.zeros(0, dtype=bool)
    x, y, _ = box.center
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    dx = points[:, 0] - x
    dy = points[:, 1] - y
    local_x = c * dx + s * dy
    local_y = -s * dx + c * dy
    bottom, top = box.z_range
    tol = 1e-6
    return (
        (np.abs(local_x) <= box.size[0] / 2.0 + tol)
        & (np.abs(local_y) <= box.size[1] / 2.0 + tol)
        & (points[:, 2] >= bottom - tol)
        & (points[:, 2] <= top + tol)
    )
