"""Synthetic multi-domain scene generation and BEV rasterization.

A frame is a set of non-overlapping oriented boxes whose per-class counts and
sizes follow the domain spec, sampled as points on the box surfaces plus
ground clutter. Every frame draws from its own seed derived from
(master seed, domain id, frame id), so frames can be generated in any order.
"""
import logging
import math
from typing import Optional

import numpy as np
from scipy.ndimage import gaussian_filter
from scipy.stats import truncnorm

from bev_domain_adapt.models import Box3D, CameraSpec, ClassSpec, DomainSpec, Frame, GridConfig, LabeledBox
from bev_domain_adapt.utils.geometry import bev_intersection_area
from bev_domain_adapt.utils.seeding import STREAM_GENERATION, STREAM_RASTER, derive_seed, make_rng

logger = logging.getLogger(__name__)

MAX_PLACEMENT_ATTEMPTS = 50
# Sizes are truncated to mean +/- this many standard deviations.
SIZE_TRUNCATION = 3.0
# Guaranteed points sit on a box shrunk by this factor, so they stay inside it.
FLOOR_SHRINK = 0.9


def sample_size(class_spec: ClassSpec, rng: np.random.Generator) -> tuple[float, float, float]:
    mean = np.asarray(class_spec.mean_size)
    std = np.asarray(class_spec.std)
    # keep sizes positive even for wide distributions
    low = np.maximum(-SIZE_TRUNCATION, (0.05 * mean - mean) / std)
    values = truncnorm.rvs(low, SIZE_TRUNCATION, loc=mean, scale=std, random_state=rng)
    return tuple(float(v) for v in values)


def _overlaps(candidate: Box3D, placed: list[Box3D]) -> bool:
    cx, cy, _ = candidate.center
    radius = 0.5 * math.hypot(candidate.size[0], candidate.size[1])
    for other in placed:
        ox, oy, _ = other.center
        if math.hypot(cx - ox, cy - oy) > radius + 0.5 * math.hypot(other.size[0], other.size[1]):
            continue
        if bev_intersection_area(candidate, other) > 0.0:
            return True
    return False


def place_box(
    size: tuple[float, float, float],
    placed: list[Box3D],
    spec: DomainSpec,
    rng: np.random.Generator,
) -> Optional[Box3D]:
    """Rejection-samples a pose that keeps the box inside the range and clear of ``placed``."""
    margin = 0.5 * math.hypot(size[0], size[1])
    extent = spec.bev_range - margin
    if extent <= 0:
        return None
    for _ in range(MAX_PLACEMENT_ATTEMPTS):
        x, y = rng.uniform(-extent, extent, size=2)
        yaw = rng.uniform(-math.pi, math.pi)
        box = Box3D(center=(float(x), float(y), spec.ground_height + size[2] / 2.0), size=size, yaw=float(yaw))
        if not _overlaps(box, placed):
            return box
    return None


def _face_samples(size: tuple[float, float, float], count: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform points on the top and four side faces of an axis-aligned box centered at the origin."""
    length, width, height = size
    areas = np.array([length * width, width * height, width * height, length * height, length * height])
    faces = rng.choice(5, size=count, p=areas / areas.sum())
    u = rng.uniform(-0.5, 0.5, size=count)
    v = rng.uniform(-0.5, 0.5, size=count)
    pts = np.empty((count, 3))
    top = faces == 0
    pts[top] = np.stack([u[top] * length, v[top] * width, np.full(top.sum(), height / 2)], axis=1)
    for face, sign in ((1, -1.0), (2, 1.0)):
        sel = faces == face
        pts[sel] = np.stack([np.full(sel.sum(), sign * length / 2), u[sel] * width, v[sel] * height], axis=1)
    for face, sign in ((3, -1.0), (4, 1.0)):
        sel = faces == face
        pts[sel] = np.stack([u[sel] * length, np.full(sel.sum(), sign * width / 2), v[sel] * height], axis=1)
    return pts


def _to_world(local: np.ndarray, box: Box3D) -> np.ndarray:
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    rotation = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    return local @ rotation.T + np.asarray(box.center)


def sample_box_points(box: Box3D, spec: DomainSpec, rng: np.random.Generator) -> np.ndarray:
    """Surface points of one box: a guaranteed floor set, then noisy samples subject to dropout."""
    noise = spec.noise
    surface = 2.0 * (box.size[0] * box.size[1] + box.size[0] * box.size[2] + box.size[1] * box.size[2])
    total = int(np.clip(round(surface * noise.surface_density), noise.min_points_per_box, noise.max_points_per_box))

    shrunk = tuple(FLOOR_SHRINK * d for d in box.size)
    floor = _face_samples(shrunk, noise.min_points_per_box, rng)
    extra = _face_samples(box.size, max(0, total - noise.min_points_per_box), rng)
    keep = rng.uniform(size=extra.shape[0]) >= noise.point_dropout
    extra = extra[keep] + rng.normal(0.0, noise.jitter_std, size=(int(keep.sum()), 3))
    return _to_world(np.concatenate([floor, extra]), box)


def _intensity(mean: float, spec: DomainSpec, count: int, rng: np.random.Generator) -> np.ndarray:
    dist = spec.intensity
    a, b = (dist.low - mean) / dist.std, (dist.high - mean) / dist.std
    return truncnorm.rvs(a, b, loc=mean, scale=dist.std, size=count, random_state=rng)


def generate_frame(spec: DomainSpec, domain_id: int, frame_id: int, master_seed: int) -> Frame:
    """Generates one frame from its derived seed."""
    seed = derive_seed(master_seed, domain_id, frame_id)
    rng = make_rng(seed, STREAM_GENERATION)
    placed: list[Box3D] = []
    labeled: list[LabeledBox] = []
    failures = 0
    for class_spec in spec.classes:
        count = int(rng.poisson(spec.expected_count(class_spec)))
        for _ in range(count):
            box = place_box(sample_size(class_spec, rng), placed, spec, rng)
            if box is None:
                failures += 1
                continue
            placed.append(box)
            velocity = None
            if spec.has_velocity:
                speed = abs(rng.normal(0.0, spec.speed_std)) if rng.uniform() < class_spec.moving_fraction else 0.0
                velocity = (float(speed * math.cos(box.yaw)), float(speed * math.sin(box.yaw)))
            labeled.append(LabeledBox(box=box, label=class_spec.raw_name, velocity=velocity))
    if failures:
        logger.warning(f"{spec.name} frame {frame_id}: placement failed for {failures} objects after {MAX_PLACEMENT_ATTEMPTS} attempts each")

    object_points = [sample_box_points(b, spec, rng) for b in placed]
    objects = np.concatenate(object_points) if object_points else np.zeros((0, 3))
    clutter = np.column_stack([
        rng.uniform(-spec.bev_range, spec.bev_range, size=(spec.noise.clutter_points, 2)),
        spec.ground_height + rng.normal(0.0, spec.noise.clutter_height_std, size=spec.noise.clutter_points),
    ])
    points = np.concatenate([objects, clutter])
    if spec.intensity is not None:
        intensity = np.concatenate([
            _intensity(spec.intensity.object_mean, spec, objects.shape[0], rng),
            _intensity(spec.intensity.ground_mean, spec, clutter.shape[0], rng),
        ])
        points = np.column_stack([points, intensity])

    return Frame(
        domain_id=domain_id,
        domain_name=spec.name,
        frame_id=frame_id,
        seed=seed,
        points=points,
        boxes=labeled,
        ground_height=spec.ground_height if spec.record_ground_height else None,
    )


def generate_domain(spec: DomainSpec, domain_id: int, frames: int, seed: int, first_frame: int = 0) -> list[Frame]:
    """Generates ``frames`` consecutive frames starting at id ``first_frame``."""
    if frames <= 0:
        raise ValueError(f"frame count must be positive, got {frames}")
    return [generate_frame(spec, domain_id, first_frame + i, seed) for i in range(frames)]


def rasterize(
    frame: Frame,
    grid: GridConfig,
    camera: Optional[CameraSpec] = None,
    intensity_channel: Optional[bool] = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Projects a frame onto the two surrogate-modality BEV grids.

    Args:
        frame: Frame to rasterize.
        grid: BEV grid geometry.
        camera: Photometric perturbation of the camera grid; identity when None.
        intensity_channel: Include a mean-intensity LiDAR channel; defaults to
            whether the frame has intensity. Frames without intensity get zeros.

    Returns:
        tuple: camera grid ``1 x S x S`` and LiDAR grid ``C x S x S`` with channels
        log(1 + count), max height and optionally mean intensity.
    """
    size = grid.size
    with_intensity = frame.has_intensity if intensity_channel is None else intensity_channel
    lidar = np.zeros((3 if with_intensity else 2, size, size))
    camera_grid = np.zeros((1, size, size))
    points = frame.points
    if points.shape[0]:
        cols = np.floor((points[:, 0] + grid.bev_range) / grid.cell_size).astype(np.int64)
        rows = np.floor((points[:, 1] + grid.bev_range) / grid.cell_size).astype(np.int64)
        inside = (rows >= 0) & (rows < size) & (cols >= 0) & (cols < size)
        points, rows, cols = points[inside], rows[inside], cols[inside]

    if points.shape[0]:
        count = np.zeros((size, size))
        np.add.at(count, (rows, cols), 1.0)
        max_height = np.full((size, size), -np.inf)
        np.maximum.at(max_height, (rows, cols), points[:, 2])
        occupied = count > 0
        lidar[0] = np.log1p(count)
        lidar[1] = np.where(occupied, max_height, 0.0)
        if with_intensity and frame.has_intensity:
            total = np.zeros((size, size))
            np.add.at(total, (rows, cols), points[:, 3])
            lidar[2] = np.where(occupied, total / np.maximum(count, 1.0), 0.0)

        camera = camera or CameraSpec()
        smoothed = gaussian_filter(occupied.astype(np.float64), sigma=camera.blur_sigma) if camera.blur_sigma else occupied.astype(np.float64)
        rng = make_rng(frame.seed, STREAM_RASTER)
        noise = rng.normal(0.0, camera.noise_std, size=(size, size)) if camera.noise_std else np.zeros((size, size))
        signal = smoothed > 1e-6
        camera_grid[0] = np.where(signal, camera.gain * smoothed + camera.bias + noise, 0.0)
    return camera_grid, lidar
