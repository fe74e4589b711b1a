"""Prototype-graph-weighted fusion of per-source detections.

Each detection from head ``n`` is weighted by ``s / (1 + G[l, 0, 1 + n])``, so
heads whose domain is close to the target for that class count more. Weighted
detections are clustered per class by 3D IoU and each cluster is replaced by
its weighted average.
"""
import logging
import math
from dataclasses import dataclass
from typing import Literal, Sequence

import numpy as np

from bev_domain_adapt.exceptions import DataError
from bev_domain_adapt.models import Box3D, Detection, FUSED_SOURCE, PrototypeGraph
from bev_domain_adapt.prototypes import NEUTRAL_DISTANCE
from bev_domain_adapt.utils.geometry import iou_3d

logger = logging.getLogger(__name__)

DEFAULT_IOU_THRESHOLD = 0.1
# Below this norm the averaged (sin, cos) heading is treated as cancelled out.
YAW_NORM_EPS = 1e-9


@dataclass
class Cluster:
    """Indices into the pooled detection list; all members share ``label``."""

    label: int
    members: list[int]

    @property
    def seed(self) -> int:
        return self.members[0]


def prediction_weight(score: float, graph: PrototypeGraph, label: int, source: int) -> float:
    """``score / (1 + distance)`` for the class-``label`` target/source-``source`` pair.

    A pair flagged as zero-mass uses the neutral distance.
    """
    if not 0 <= label < graph.num_classes:
        raise ValueError(f"label {label} outside the graph's {graph.num_classes} classes")
    if not 0 <= source < graph.num_sources:
        raise ValueError(f"source {source} outside the graph's {graph.num_sources} sources")
    distance = NEUTRAL_DISTANCE if graph.is_neutral(label, source) else graph.target_distance(label, source)
    return score / (1.0 + distance)


def _canonical_order(detections: Sequence[Detection], weights: Sequence[float]) -> list[int]:
    return sorted(range(len(detections)), key=lambda i: (-weights[i],) + detections[i].sort_key())


def cluster(
    detections: Sequence[Detection],
    weights: Sequence[float],
    iou_threshold: float = DEFAULT_IOU_THRESHOLD,
    method: Literal["seed", "components"] = "seed",
) -> list[Cluster]:
    """Groups same-class detections whose 3D IoU exceeds ``iou_threshold``.

    ``seed``: detections are visited by descending weight; each joins the first
    cluster whose seed it overlaps, else seeds a new cluster.
    ``components``: transitive closure of the overlap relation.
    """
    if len(weights) != len(detections):
        raise ValueError(f"{len(weights)} weights for {len(detections)} detections")
    order = _canonical_order(detections, weights)
    if method == "components":
        return _component_clusters(detections, order, iou_threshold)
    if method != "seed":
        raise ValueError(f"Unknown clustering method '{method}'")

    clusters: list[Cluster] = []
    for idx in order:
        det = detections[idx]
        for c in clusters:
            if c.label == det.label and iou_3d(detections[c.seed].box, det.box) > iou_threshold:
                c.members.append(idx)
                break
        else:
            clusters.append(Cluster(label=det.label, members=[idx]))
    return clusters


def _component_clusters(detections: Sequence[Detection], order: list[int], iou_threshold: float) -> list[Cluster]:
    parent = {i: i for i in order}

    def find(i: int) -> int:
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for a_pos, a in enumerate(order):
        for b in order[a_pos + 1:]:
            if detections[a].label == detections[b].label and iou_3d(detections[a].box, detections[b].box) > iou_threshold:
                root_a, root_b = find(a), find(b)
                if root_a != root_b:
                    # keep the earlier (heavier) detection as root
                    if order.index(root_a) < order.index(root_b):
                        parent[root_b] = root_a
                    else:
                        parent[root_a] = root_b

    groups: dict[int, list[int]] = {}
    for idx in order:
        groups.setdefault(find(idx), []).append(idx)
    return [Cluster(label=detections[members[0]].label, members=members) for members in groups.values()]


def fuse_cluster(members: Sequence[Detection], weights: Sequence[float]) -> Detection:
    """Weighted average of a single-class cluster.

    Center, size and score are weighted means; yaw is the angle of the weighted
    mean (sin, cos). A singleton keeps its box and score and is marked as fused.
    """
    if not members:
        raise ValueError("Cannot fuse an empty cluster")
    labels = {m.label for m in members}
    if len(labels) != 1:
        raise ValueError(f"Cluster mixes labels {sorted(labels)}")
    if len(members) == 1:
        return members[0].model_copy(update={"source": FUSED_SOURCE})

    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (len(members),) or np.any(w < 0) or w.sum() <= 0:
        raise ValueError(f"Fusion weights must be non-negative with a positive sum, got {list(weights)}")
    total = w.sum()
    centers = np.array([m.box.center for m in members])
    sizes = np.array([m.box.size for m in members])
    scores = np.array([m.score for m in members])
    yaws = np.array([m.box.yaw for m in members])

    center = w @ centers / total
    size = w @ sizes / total
    score = float(w @ scores / total)
    sin_sum, cos_sum = float(w @ np.sin(yaws)), float(w @ np.cos(yaws))
    if math.hypot(sin_sum, cos_sum) < YAW_NORM_EPS:
        yaw = float(yaws[int(np.argmax(w))])
        logger.warning(f"Headings cancel out in a {len(members)}-member cluster; keeping the heaviest member's yaw {yaw:.4f}")
    else:
        yaw = math.atan2(sin_sum, cos_sum)

    box = Box3D(center=tuple(float(v) for v in center), size=tuple(float(v) for v in size), yaw=yaw)
    return Detection(box=box, score=min(1.0, max(0.0, score)), label=members[0].label, source=FUSED_SOURCE)


def pgw_fuse(
    per_source: Sequence[Sequence[Detection]],
    graph: PrototypeGraph,
    iou_threshold: float = DEFAULT_IOU_THRESHOLD,
    method: Literal["seed", "components"] = "seed",
) -> list[Detection]:
    """Fuses the detections of N heads on one frame.

    Args:
        per_source: Detection list of each source head, indexed by source.
        graph: Prototype graph with N sources.
        iou_threshold: Clustering IoU threshold.
        method: Clustering rule, see ``cluster``.

    Returns:
        list[Detection]: Fused detections, highest score first.
    """
    if len(per_source) != graph.num_sources:
        raise DataError(f"{len(per_source)} detection lists for a graph with {graph.num_sources} sources")
    pooled: list[Detection] = []
    for source, detections in enumerate(per_source):
        for det in detections:
            if det.source != source:
                raise DataError(f"Detection in list {source} carries source index {det.source}")
            pooled.append(det)

    neutral = sorted({(d.label, d.source) for d in pooled if graph.is_neutral(d.label, d.source)})
    for label, source in neutral:
        logger.warning(
            f"Class {graph.class_names[label]} has no prototype for source {source} or the target; using neutral distance"
        )

    weights = [prediction_weight(d.score, graph, d.label, d.source) for d in pooled]
    fused = [
        fuse_cluster([pooled[i] for i in c.members], [weights[i] for i in c.members])
        for c in cluster(pooled, weights, iou_threshold, method)
    ]
    return sorted(fused, key=Detection.sort_key)
