from typing import Literal, Optional

import numpy as np
from pydantic import Field, field_validator, model_validator

from bev_domain_adapt.models.base import ArrayModel, FloatArray
from bev_domain_adapt.models.box import Detection, LabeledBox

FRAME_SCHEMA = "bda.frame/1"
DETECTIONS_SCHEMA = "bda.detections/1"


class Frame(ArrayModel):
    """One synthetic scene: points, ground-truth boxes and provenance.

    Points are ``P x 3`` (x, y, z) or ``P x 4`` (x, y, z, intensity).
    """

    schema_: Literal["bda.frame/1"] = Field(FRAME_SCHEMA, alias="schema", title="Schema")
    domain_id: int = Field(..., ge=0, title="Domain ID", description="Index of the generating domain")
    domain_name: str = Field(..., title="Domain Name")
    frame_id: int = Field(..., ge=0, title="Frame ID")
    seed: int = Field(..., ge=0, title="Seed", description="Per-frame seed derived from the master seed")
    points: FloatArray = Field(..., title="Points", description="P x 3 or P x 4 array")
    boxes: list[LabeledBox] = Field(default_factory=list, title="Boxes")
    ground_height: Optional[float] = Field(None, title="Ground Height", description="Known sensor-frame ground height, if recorded")

    model_config = ArrayModel.model_config | {"populate_by_name": True}

    @field_validator("points")
    @classmethod
    def _point_layout(cls, value: np.ndarray) -> np.ndarray:
        if value.size == 0:
            return np.zeros((0, value.shape[1] if value.ndim == 2 else 3))
        if value.ndim != 2 or value.shape[1] not in (3, 4):
            raise ValueError(f"points must be P x 3 or P x 4, got shape {value.shape}")
        return value

    @property
    def has_intensity(self) -> bool:
        return self.points.shape[1] == 4

    @property
    def has_velocity(self) -> bool:
        return any(b.velocity is not None for b in self.boxes)

    @property
    def num_points(self) -> int:
        return int(self.points.shape[0])

    def to_json(self) -> str:
        return self.model_dump_json(by_alias=True)


class FrameDetections(ArrayModel):
    """Detections for one frame, from one head or fused."""

    schema_: Literal["bda.detections/1"] = Field(DETECTIONS_SCHEMA, alias="schema", title="Schema")
    domain_id: int = Field(..., ge=0, title="Domain ID")
    frame_id: int = Field(..., ge=0, title="Frame ID")
    source: int = Field(..., ge=-1, title="Source", description="Head index the detections came from, -1 when fused")
    class_names: list[str] = Field(..., title="Class Names", description="Names of the detection class indices")
    detections: list[Detection] = Field(default_factory=list, title="Detections")

    model_config = ArrayModel.model_config | {"populate_by_name": True}

    @model_validator(mode="after")
    def _labels_in_range(self):
        for det in self.detections:
            if det.label >= len(self.class_names):
                raise ValueError(f"detection label {det.label} outside {len(self.class_names)} classes")
        return self

    def to_json(self) -> str:
        return self.model_dump_json(by_alias=True)
