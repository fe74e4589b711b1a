from typing import Literal

import numpy as np
from pydantic import Field, model_validator

from bev_domain_adapt.models.base import ArrayModel, BoolArray, FloatArray

PROTOTYPE_GRAPH_SCHEMA = "bda.prototype_graph/1"
INDEX_CONVENTION = "index 0 = target domain, index 1 + n = source n (0-based)"
# Tolerance for symmetry and range checks on loaded graphs.
GRAPH_TOLERANCE = 1e-9


class PrototypeGraph(ArrayModel):
    """Per-class cosine distances between domain prototypes.

    ``distances[l, a, b]`` is the class-``l`` distance between domains ``a`` and
    ``b``; index 0 is the target and ``1 + n`` the ``n``-th source.
    """

    schema_: Literal["bda.prototype_graph/1"] = Field(PROTOTYPE_GRAPH_SCHEMA, alias="schema", title="Schema")
    index_convention: str = Field(INDEX_CONVENTION, title="Index Convention")
    class_names: list[str] = Field(..., min_length=1, title="Class Names")
    domain_names: list[str] = Field(..., min_length=2, title="Domain Names", description="Target first, then sources")
    levels: int = Field(3, ge=1, title="Levels", description="Feature levels averaged into the graph")
    distances: FloatArray = Field(..., title="Distances", description="K x (1+N) x (1+N) array")
    zero_mass: BoolArray = Field(..., title="Zero Mass", description="K x (1+N) flags for classes never predicted in a domain")

    model_config = ArrayModel.model_config | {"populate_by_name": True}

    @model_validator(mode="after")
    def _check_graph(self):
        k, d = len(self.class_names), len(self.domain_names)
        if self.distances.shape != (k, d, d):
            raise ValueError(f"distances must have shape {(k, d, d)}, got {self.distances.shape}")
        if self.zero_mass.shape != (k, d):
            raise ValueError(f"zero_mass must have shape {(k, d)}, got {self.zero_mass.shape}")
        g = self.distances
        if np.max(np.abs(g - g.transpose(0, 2, 1))) > GRAPH_TOLERANCE:
            raise ValueError("prototype graph is not symmetric")
        if np.max(np.abs(np.diagonal(g, axis1=1, axis2=2))) > GRAPH_TOLERANCE:
            raise ValueError("prototype graph diagonal is not zero")
        if g.min() < -GRAPH_TOLERANCE or g.max() > 2.0 + GRAPH_TOLERANCE:
            raise ValueError(f"prototype graph entries must lie in [0, 2], got [{g.min()}, {g.max()}]")
        return self

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    @property
    def num_sources(self) -> int:
        return len(self.domain_names) - 1

    def target_distance(self, label: int, source: int) -> float:
        """Class-``label`` distance between the target and source ``source`` (0-based)."""
        return float(self.distances[label, 0, 1 + source])

    def is_neutral(self, label: int, source: int) -> bool:
        """True when either side of the target-source pair had no class mass."""
        return bool(self.zero_mass[label, 0] or self.zero_mass[label, 1 + source])

    def to_json(self) -> str:
        return self.model_dump_json(by_alias=True, indent=2)

    @classmethod
    def uniform(cls, class_names: list[str], domain_names: list[str]) -> "PrototypeGraph":
        """All-zero graph: fusion weights reduce to the raw scores."""
        k, d = len(class_names), len(domain_names)
        return cls(
            class_names=class_names,
            domain_names=domain_names,
            distances=np.zeros((k, d, d)),
            zero_mass=np.zeros((k, d), dtype=bool),
        )
