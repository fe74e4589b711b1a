"""Detection evaluation: greedy matching, 101-point interpolated AP and heading-weighted APH.

Single difficulty level: synthetic frames carry no difficulty annotation.
"""
import logging
import math
from dataclasses import dataclass
from typing import Literal, Mapping, Optional, Sequence

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field

from bev_domain_adapt.exceptions import DataError
from bev_domain_adapt.models import Box3D, Detection
from bev_domain_adapt.utils.geometry import iou_3d

logger = logging.getLogger(__name__)

METRICS_SCHEMA = "bda.metrics/1"
RECALL_POINTS = np.linspace(0.0, 1.0, 101)

# One evaluated frame: its detections and its (box, class index) ground truth.
EvalFrame = tuple[Sequence[Detection], Sequence[tuple[Box3D, int]]]


@dataclass
class MatchResult:
    """Matching outcome of one class, detections in processing order.

    Attributes:
        label (int): Class index.
        num_gt (int): Ground-truth boxes of this class over all frames.
        scores (np.ndarray): Detection scores, descending.
        tp (np.ndarray): True-positive flags.
        matched_gt (np.ndarray): Global ground-truth id per detection, -1 for false positives.
        heading_error (np.ndarray): Wrapped yaw error in [0, pi] for true positives, NaN otherwise.
    """

    label: int
    num_gt: int
    scores: np.ndarray
    tp: np.ndarray
    matched_gt: np.ndarray
    heading_error: np.ndarray

    @property
    def num_detections(self) -> int:
        return int(self.scores.size)

    def pr_curve(self, heading_weighted: bool = False) -> tuple[np.ndarray, np.ndarray]:
        """Cumulative (recall, precision) after each detection.

        With ``heading_weighted`` every true positive counts ``max(0, 1 - err / pi)``
        in the precision numerator; recall is unweighted.
        """
        if self.num_detections == 0:
            return np.zeros(0), np.zeros(0)
        tp = self.tp.astype(np.float64)
        hits = np.cumsum(tp)
        recall = hits / max(self.num_gt, 1)
        if heading_weighted:
            weight = np.where(self.tp, np.maximum(0.0, 1.0 - np.nan_to_num(self.heading_error) / math.pi), 0.0)
            hits = np.cumsum(weight)
        precision = hits / np.arange(1, self.num_detections + 1)
        return recall, precision


def heading_error(a: float, b: float) -> float:
    """Absolute yaw difference wrapped into [0, pi]."""
    diff = abs(a - b) % (2.0 * math.pi)
    return min(diff, 2.0 * math.pi - diff)


def match(frames: Sequence[EvalFrame], label: int, iou_threshold: float) -> MatchResult:
    """Greedy matching of one class over all frames.

    Detections are processed by descending score, ties broken by (frame index,
    position in the frame's list). A detection is a true positive when its
    best-overlapping unmatched ground truth of the same class reaches
    ``iou_threshold``.
    """
    if not 0.0 < iou_threshold <= 1.0:
        raise ValueError(f"IoU threshold must lie in (0, 1], got {iou_threshold}")
    gt_ids: list[list[int]] = []
    gt_boxes: dict[int, Box3D] = {}
    queue = []
    for f, (detections, ground_truth) in enumerate(frames):
        ids = []
        for box, gt_label in ground_truth:
            if gt_label == label:
                ids.append(len(gt_boxes))
                gt_boxes[len(gt_boxes)] = box
        gt_ids.append(ids)
        queue.extend((-det.score, f, i, det) for i, det in enumerate(detections) if det.label == label)
    queue.sort(key=lambda item: item[:3])

    matched: set[int] = set()
    tp = np.zeros(len(queue), dtype=bool)
    matched_gt = np.full(len(queue), -1, dtype=np.int64)
    errors = np.full(len(queue), np.nan)
    for k, (_, f, _, det) in enumerate(queue):
        best_iou, best_id = 0.0, -1
        for gid in gt_ids[f]:
            if gid in matched:
                continue
            iou = iou_3d(det.box, gt_boxes[gid])
            if iou > best_iou:
                best_iou, best_id = iou, gid
        if best_id >= 0 and best_iou >= iou_threshold:
            matched.add(best_id)
            tp[k] = True
            matched_gt[k] = best_id
            errors[k] = heading_error(det.box.yaw, gt_boxes[best_id].yaw)

    return MatchResult(
        label=label,
        num_gt=len(gt_boxes),
        scores=np.array([-item[0] for item in queue]),
        tp=tp,
        matched_gt=matched_gt,
        heading_error=errors,
    )


def _interpolated_ap(recall: np.ndarray, precision: np.ndarray) -> float:
    if recall.size == 0:
        return 0.0
    # precision envelope: best precision at any recall >= r
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    idx = np.searchsorted(recall, RECALL_POINTS, side="left")
    sampled = np.where(idx < recall.size, envelope[np.minimum(idx, recall.size - 1)], 0.0)
    return float(sampled.mean())


def average_precision(result: MatchResult) -> Optional[float]:
    """101-point interpolated AP; None when the class has neither ground truth nor detections."""
    if result.num_gt == 0:
        return None if result.num_detections == 0 else 0.0
    return _interpolated_ap(*result.pr_curve())


def average_precision_heading(result: MatchResult) -> Optional[float]:
    if result.num_gt == 0:
        return None if result.num_detections == 0 else 0.0
    recall, _ = result.pr_curve()
    _, precision = result.pr_curve(heading_weighted=True)
    return _interpolated_ap(recall, precision)


class ClassMetrics(BaseModel):
    ap: Optional[float] = Field(None, title="AP", description="None when undefined")
    aph: Optional[float] = Field(None, title="APH")
    num_gt: int = Field(0, ge=0, title="Ground Truth Count")
    num_detections: int = Field(0, ge=0, title="Detection Count")
    iou_threshold: float = Field(..., title="IoU Threshold")


class MetricReport(BaseModel):
    """Per-class AP/APH and their means over the classes with a defined AP."""

    schema_: Literal["bda.metrics/1"] = Field(METRICS_SCHEMA, alias="schema", title="Schema")
    name: str = Field("", title="Name")
    level: str = Field("single", title="Difficulty Level")
    classes: dict[str, ClassMetrics] = Field(default_factory=dict, title="Classes")
    mean_ap: Optional[float] = Field(None, title="mAP")
    mean_aph: Optional[float] = Field(None, title="mAPH")

    model_config = {"populate_by_name": True}

    def to_json(self) -> str:
        return self.model_dump_json(by_alias=True, indent=2)

    def ap(self, class_name: str) -> Optional[float]:
        return self.classes[class_name].ap


def evaluate(
    frames: Sequence[EvalFrame],
    class_names: Sequence[str],
    iou_thresholds: Mapping[str, float],
    name: str = "",
) -> MetricReport:
    """Matches every class and summarizes AP/APH.

    Args:
        frames: (detections, ground truth) per frame.
        class_names: Names of the detection class indices.
        iou_thresholds: IoU threshold per class name.
        name: Row label carried into the report.
    """
    classes = {}
    for label, class_name in enumerate(class_names):
        if class_name not in iou_thresholds:
            raise DataError(f"No IoU threshold configured for class {class_name}")
        result = match(frames, label, iou_thresholds[class_name])
        classes[class_name] = ClassMetrics(
            ap=average_precision(result),
            aph=average_precision_heading(result),
            num_gt=result.num_gt,
            num_detections=result.num_detections,
            iou_threshold=iou_thresholds[class_name],
        )
    defined = [m for m in classes.values() if m.ap is not None]
    report = MetricReport(
        name=name,
        classes=classes,
        mean_ap=float(np.mean([m.ap for m in defined])) if defined else None,
        mean_aph=float(np.mean([m.aph for m in defined])) if defined else None,
    )
    logger.debug(f"Evaluated {name or 'detections'}: mAP {report.mean_ap}, mAPH {report.mean_aph}")
    return report


def metrics_table(reports: Sequence[MetricReport]) -> pd.DataFrame:
    """One row per report: per-class AP/APH and the means, in percent."""
    rows = []
    for report in reports:
        row = {"Method": report.name}
        for class_name, m in report.classes.items():
            row[f"{class_name} AP"] = None if m.ap is None else 100.0 * m.ap
            row[f"{class_name} APH"] = None if m.aph is None else 100.0 * m.aph
        row["mAP"] = None if report.mean_ap is None else 100.0 * report.mean_ap
        row["mAPH"] = None if report.mean_aph is None else 100.0 * report.mean_aph
        rows.append(row)
    return pd.DataFrame(rows).set_index("Method").astype(float)


def format_table(table: pd.DataFrame) -> str:
    return table.to_string(float_format=lambda v: f"{v:6.2f}", na_rep="   n/a")
