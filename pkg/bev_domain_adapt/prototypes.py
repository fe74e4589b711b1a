"""Class-wise prototypes from heatmap-weighted features, and the prototype graph.

For every feature level the predicted heatmap is resized to the level's extent,
and each class accumulates ``sum_pixels h * f`` together with its spatial mass
``sum_pixels h``. Dividing the two over all frames of a domain gives the
domain's prototype, which equals normalizing the heatmap over the spatial
dimension of all frames taken together.
"""
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
from pydantic import ValidationError

from bev_domain_adapt.exceptions import DataError, ShapeError
from bev_domain_adapt.models import PrototypeGraph
from bev_domain_adapt.models.prototype_graph import PROTOTYPE_GRAPH_SCHEMA
from bev_domain_adapt.tensor import Tensor
from bev_domain_adapt.tensor.functional import resize_matrix
from bev_domain_adapt.utils.io import atomic_write_text, read_text_checked

logger = logging.getLogger(__name__)

# Classes whose accumulated mass stays below this are treated as never predicted.
ZERO_MASS_EPS = 1e-12
# Distance assigned to any pair involving a zero-mass class.
NEUTRAL_DISTANCE = 1.0


def _as_array(value) -> np.ndarray:
    return np.asarray(value.data if isinstance(value, Tensor) else value, dtype=np.float64)


def resize_heatmap(heatmap: np.ndarray, height: int, width: int) -> np.ndarray:
    """Bilinear resize of a ``K x H x W`` heatmap with half-pixel centers."""
    rows = resize_matrix(heatmap.shape[1], height)
    cols = resize_matrix(heatmap.shape[2], width)
    return np.einsum("oh,khw,pw->kop", rows, heatmap, cols, optimize=True)


@dataclass
class PrototypeSet:
    """Mass-normalized per-level prototypes of one domain.

    Attributes:
        levels (list[np.ndarray]): One ``K x C_i`` matrix per feature level.
        zero_mass (np.ndarray): ``K`` flags for classes that never received heatmap mass.
        domain (str): Domain name.
    """

    levels: list[np.ndarray]
    zero_mass: np.ndarray
    domain: str = ""

    @property
    def num_classes(self) -> int:
        return self.levels[0].shape[0]

    @property
    def channels(self) -> tuple[int, ...]:
        return tuple(level.shape[1] for level in self.levels)


@dataclass
class PrototypeAccumulator:
    """Running per-level numerators (``K x C_i``) and class masses (``K``)."""

    numerators: list[np.ndarray] = field(default_factory=list)
    masses: list[np.ndarray] = field(default_factory=list)
    frames: int = 0

    def add(self, contribution: "PrototypeAccumulator") -> "PrototypeAccumulator":
        if not self.numerators:
            self.numerators = [n.copy() for n in contribution.numerators]
            self.masses = [m.copy() for m in contribution.masses]
        else:
            if len(contribution.numerators) != len(self.numerators):
                raise ShapeError(f"Cannot merge {len(contribution.numerators)} levels into {len(self.numerators)}")
            for i, (num, mass) in enumerate(zip(contribution.numerators, contribution.masses)):
                if num.shape != self.numerators[i].shape:
                    raise ShapeError(f"Level {i}: contribution {num.shape} does not match {self.numerators[i].shape}")
                self.numerators[i] = self.numerators[i] + num
                self.masses[i] = self.masses[i] + mass
        self.frames += contribution.frames
        return self

    def prototypes(self, domain: str = "") -> PrototypeSet:
        if not self.numerators:
            raise DataError("No frames were accumulated")
        zero_mass = self.masses[0] <= ZERO_MASS_EPS
        levels = []
        for num, mass in zip(self.numerators, self.masses):
            safe = np.where(mass > ZERO_MASS_EPS, mass, 1.0)
            levels.append(np.where((mass > ZERO_MASS_EPS)[:, None], num / safe[:, None], 0.0))
        return PrototypeSet(levels=levels, zero_mass=zero_mass, domain=domain)


def accumulate_prototypes(pyramid, heatmap) -> PrototypeAccumulator:
    """One frame's contribution to the prototypes of its domain.

    Args:
        pyramid: ``FeaturePyramid`` or a sequence of ``C_i x H_i x W_i`` feature maps.
        heatmap: Predicted ``K x H x W`` heatmap.

    Returns:
        PrototypeAccumulator: ``h_flat @ f_flat.T`` and ``h_flat.sum(1)`` per level.
    """
    levels = pyramid.levels() if hasattr(pyramid, "levels") else pyramid
    heat = _as_array(heatmap)
    if heat.ndim != 3:
        raise ShapeError(f"heatmap must be K x H x W, got {heat.shape}")
    contribution = PrototypeAccumulator(frames=1)
    for level in levels:
        features = _as_array(level)
        if features.ndim != 3:
            raise ShapeError(f"feature level must be C x H x W, got {features.shape}")
        channels, height, width = features.shape
        h_level = heat if heat.shape[1:] == (height, width) else resize_heatmap(heat, height, width)
        h_flat = h_level.reshape(heat.shape[0], -1)
        f_flat = features.reshape(channels, -1)
        contribution.numerators.append(h_flat @ f_flat.T)
        contribution.masses.append(h_flat.sum(axis=1))
    return contribution


def merge_contributions(contributions: Iterable[PrototypeAccumulator]) -> PrototypeAccumulator:
    """Sums contributions in the given order."""
    total = PrototypeAccumulator()
    for contribution in contributions:
        total.add(contribution)
    return total


def cosine_distance_rows(pa: np.ndarray, pb: np.ndarray) -> np.ndarray:
    """Per-row ``1 - cos`` after l2 normalization; a zero-norm row gives distance 1."""
    pa = np.asarray(pa, dtype=np.float64)
    pb = np.asarray(pb, dtype=np.float64)
    if pa.shape != pb.shape:
        raise ShapeError(f"prototype matrices differ: {pa.shape} vs {pb.shape}")
    norm_a = np.linalg.norm(pa, axis=1)
    norm_b = np.linalg.norm(pb, axis=1)
    valid = (norm_a > 0) & (norm_b > 0)
    cos = np.zeros(pa.shape[0])
    cos[valid] = np.sum(pa[valid] * pb[valid], axis=1) / (norm_a[valid] * norm_b[valid])
    distance = np.where(valid, 1.0 - cos, NEUTRAL_DISTANCE)
    return np.clip(distance, 0.0, 2.0)


def build_graph(
    prototype_sets: Sequence[PrototypeSet],
    class_names: Sequence[str],
    domain_names: Optional[Sequence[str]] = None,
) -> PrototypeGraph:
    """Averages per-level distance tensors into a ``K x (1+N) x (1+N)`` graph.

    Args:
        prototype_sets: Target first, then the N sources.
        class_names: Names of the K classes.
        domain_names: Defaults to the sets' domain names.

    Raises:
        ShapeError: If the sets disagree on class count, level count or level widths.
    """
    if len(prototype_sets) < 2:
        raise DataError(f"Need the target and at least one source, got {len(prototype_sets)} prototype sets")
    reference = prototype_sets[0]
    for ps in prototype_sets[1:]:
        if ps.num_classes != reference.num_classes or ps.channels != reference.channels:
            raise ShapeError(
                f"Prototype level mismatch: {ps.domain or 'domain'} has K={ps.num_classes}, C={ps.channels}; "
                f"expected K={reference.num_classes}, C={reference.channels}"
            )
    if len(class_names) != reference.num_classes:
        raise ShapeError(f"{len(class_names)} class names for {reference.num_classes} prototype rows")

    k, d = reference.num_classes, len(prototype_sets)
    zero_mass = np.stack([ps.zero_mass for ps in prototype_sets], axis=1)
    per_level = []
    for level in range(len(reference.levels)):
        g = np.zeros((k, d, d))
        for a in range(d):
            for b in range(a + 1, d):
                dist = cosine_distance_rows(prototype_sets[a].levels[level], prototype_sets[b].levels[level])
                dist = np.where(zero_mass[:, a] | zero_mass[:, b], NEUTRAL_DISTANCE, dist)
                g[:, a, b] = dist
                g[:, b, a] = dist
        per_level.append(g)
    distances = np.mean(per_level, axis=0)

    for label, name in enumerate(class_names):
        empty = [prototype_sets[i].domain or str(i) for i in np.flatnonzero(zero_mass[label])]
        if empty:
            logger.warning(f"Class {name} has no heatmap mass in {empty}; their distances are fixed at {NEUTRAL_DISTANCE}")

    names = list(domain_names) if domain_names is not None else [ps.domain or f"domain_{i}" for i, ps in enumerate(prototype_sets)]
    return PrototypeGraph(
        class_names=list(class_names),
        domain_names=names,
        levels=len(reference.levels),
        distances=distances,
        zero_mass=zero_mass,
    )


def save_graph(path: Path, graph: PrototypeGraph) -> None:
    atomic_write_text(path, graph.to_json())
    logger.info(f"Wrote prototype graph ({graph.num_classes} classes, {graph.num_sources} sources) to {path}")


def load_graph(path: Path) -> PrototypeGraph:
    """Reads a graph artifact.

    Raises:
        DataError: On a missing file, malformed JSON, wrong schema or invalid graph.
    """
    try:
        content = json.loads(read_text_checked(path))
    except json.JSONDecodeError as e:
        raise DataError(f"Prototype graph {path} is not valid JSON: {e}") from e
    if not isinstance(content, dict) or content.get("schema") != PROTOTYPE_GRAPH_SCHEMA:
        raise DataError(f"{path} is not a {PROTOTYPE_GRAPH_SCHEMA} artifact")
    try:
        return PrototypeGraph.model_validate(content)
    except ValidationError as e:
        raise DataError(f"Invalid prototype graph {path}: {e}") from e
