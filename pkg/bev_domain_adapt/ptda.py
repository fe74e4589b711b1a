"""Pre-training domain adaptation: per-frame transforms applied before training.

All transforms are pure and idempotent; they return updated copies.
"""
import logging
from typing import Literal, Optional

import numpy as np

from bev_domain_adapt.exceptions import DataError
from bev_domain_adapt.models import Box3D, ClassMap, Frame, PTDAFlags, detection_class_index

logger = logging.getLogger(__name__)

GROUND_PERCENTILE = 5.0


def estimate_ground_height(points: np.ndarray) -> float:
    """Lower 5th percentile of point heights."""
    return float(np.percentile(points[:, 2], GROUND_PERCENTILE, method="lower"))


def shift_coordinates(frame: Frame, ground_height: Optional[float] = None) -> Frame:
    """Translates the frame so the ground plane sits at z = 0.

    The ground height is ``ground_height`` if given, else the frame's recorded
    value, else the 5th percentile of point z.
    """
    if frame.num_points == 0:
        logger.warning(f"Frame {frame.domain_name}/{frame.frame_id} has no points; coordinate shift skipped")
        return frame
    g = ground_height if ground_height is not None else frame.ground_height
    if g is None:
        g = estimate_ground_height(frame.points)
    if g == 0.0:
        return frame if frame.ground_height == 0.0 else frame.model_copy(update={"ground_height": 0.0})
    points = frame.points.copy()
    points[:, 2] -= g
    boxes = [b.model_copy(update={"box": b.box.translated(dz=-g)}) for b in frame.boxes]
    return frame.model_copy(update={"points": points, "boxes": boxes, "ground_height": 0.0})


def remove_intensity(frame: Frame) -> Frame:
    if not frame.has_intensity:
        return frame
    return frame.model_copy(update={"points": np.ascontiguousarray(frame.points[:, :3])})


def remove_velocity(frame: Frame) -> Frame:
    if not frame.has_velocity:
        return frame
    return frame.model_copy(update={"boxes": [b.model_copy(update={"velocity": None}) for b in frame.boxes]})


def remap_classes(frame: Frame, class_map: ClassMap) -> Frame:
    """Rewrites raw labels to canonical classes.

    Raises:
        DataError: Naming the first label the map does not cover.
    """
    boxes = [b.model_copy(update={"label": class_map.canonical(b.label)}) for b in frame.boxes]
    return frame.model_copy(update={"boxes": boxes})


def apply_ptda(
    frame: Frame,
    flags: PTDAFlags,
    class_map: Optional[ClassMap] = None,
    role: Literal["source", "target"] = "source",
) -> Frame:
    """Applies the enabled strategies in the order shift, intensity, velocity, remap.

    Intensity removal restricts the model input and applies to every domain;
    the other strategies apply to source frames only.
    """
    if flags.shift and role == "source":
        frame = shift_coordinates(frame)
    if flags.intensity:
        frame = remove_intensity(frame)
    if flags.velocity and role == "source":
        frame = remove_velocity(frame)
    if flags.remap and role == "source":
        if class_map is None:
            raise DataError("Class remapping is enabled but no class map was given")
        frame = remap_classes(frame, class_map)
    return frame


def detection_targets(frame: Frame) -> list[tuple[Box3D, int]]:
    """(box, class index) pairs used as detection-loss targets.

    Labels are matched case-insensitively against the detection classes;
    Others and unmatched raw labels are left out.
    """
    targets = []
    for labeled in frame.boxes:
        index = detection_class_index(labeled.label)
        if index is not None:
            targets.append((labeled.box, index))
    return targets


def canonical_targets(frame: Frame, class_map: ClassMap) -> list[tuple[Box3D, int]]:
    """(box, class index) pairs after mapping every raw label through ``class_map``.

    Used for evaluation ground truth and for supervised target training.

    Raises:
        DataError: If a label has no entry in the map.
    """
    targets = []
    for labeled in frame.boxes:
        index = detection_class_index(class_map.canonical(labeled.label))
        if index is not None:
            targets.append((labeled.box, index))
    return targets
