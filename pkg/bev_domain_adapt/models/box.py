import math
from typing import Optional

from pydantic import Field, field_validator

from bev_domain_adapt.models.base import FrozenModel

# Source index carried by detections produced by merging several heads.
FUSED_SOURCE = -1


def normalize_yaw(yaw: float) -> float:
    """Wraps an angle into (-pi, pi]."""
    wrapped = -((-yaw + math.pi) % (2.0 * math.pi) - math.pi)
    return math.pi if wrapped == -math.pi else wrapped


class Box3D(FrozenModel):
    center: tuple[float, float, float] = Field(..., title="Center", description="(x, y, z) in meters; z is the mid-height of the box")
    size: tuple[float, float, float] = Field(..., title="Size", description="(length, width, height) in meters, all positive")
    yaw: float = Field(0.0, title="Yaw", description="Heading about the vertical axis in radians, normalized into (-pi, pi]")

    @field_validator("center")
    @classmethod
    def _finite_center(cls, value):
        if not all(math.isfinite(v) for v in value):
            raise ValueError(f"box center must be finite, got {value}")
        return value

    @field_validator("size")
    @classmethod
    def _positive_size(cls, value):
        if not all(math.isfinite(v) and v > 0 for v in value):
            raise ValueError(f"box size components must be strictly positive, got {value}")
        return value

    @field_validator("yaw")
    @classmethod
    def _normalize_yaw(cls, value):
        if not math.isfinite(value):
            raise ValueError(f"box yaw must be finite, got {value}")
        return normalize_yaw(value)

    @property
    def volume(self) -> float:
        return self.size[0] * self.size[1] * self.size[2]

    @property
    def bev_area(self) -> float:
        return self.size[0] * self.size[1]

    @property
    def z_range(self) -> tuple[float, float]:
        half = self.size[2] / 2.0
        return self.center[2] - half, self.center[2] + half

    def translated(self, dx: float = 0.0, dy: float = 0.0, dz: float = 0.0) -> "Box3D":
        x, y, z = self.center
        return self.model_copy(update={"center": (x + dx, y + dy, z + dz)})


class LabeledBox(FrozenModel):
    """Ground-truth annotation: a box, its class name and optional velocity."""

    box: Box3D = Field(..., title="Box")
    label: str = Field(..., title="Label", description="Raw dataset class name, or canonical name after remapping")
    velocity: Optional[tuple[float, float]] = Field(None, title="Velocity", description="(vx, vy) in m/s when the dataset provides it")


class Detection(FrozenModel):
    box: Box3D = Field(..., title="Box")
    score: float = Field(..., ge=0.0, le=1.0, title="Score", description="Confidence in [0, 1]")
    label: int = Field(..., ge=0, title="Label", description="Detection class index")
    source: int = Field(..., ge=FUSED_SOURCE, title="Source", description="Head (source domain) index, or -1 once fused")

    def sort_key(self) -> tuple:
        """Canonical ordering key: score descending, then geometry."""
        return (-self.score, self.label, self.box.center, self.box.size, self.box.yaw, self.source)
