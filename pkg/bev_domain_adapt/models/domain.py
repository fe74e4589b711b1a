from typing import Literal, Optional

from pydantic import Field, field_validator, model_validator

from bev_domain_adapt.config.base import CANONICAL_CLASSES, DETECTION_CLASSES
from bev_domain_adapt.exceptions import DataError
from bev_domain_adapt.models.base import FrozenModel

DOMAIN_SPEC_SCHEMA = "bda.domain_spec/1"
CanonicalClass = Literal["Car", "Pedestrian", "Cyclist", "Others"]


def _positive_triplet(value, field: str):
    if any(v <= 0 for v in value):
        raise ValueError(f"{field} components must be positive, got {value}")
    return value


class ClassSpec(FrozenModel):
    """Per-class statistics of a synthetic domain."""

    raw_name: str = Field(..., title="Raw Name", description="Dataset-specific class name written into frames")
    mean_size: tuple[float, float, float] = Field(..., title="Mean Size", description="Mean (length, width, height) in meters")
    size_std: Optional[tuple[float, float, float]] = Field(
        None, title="Size Std", description="Per-dimension standard deviation; defaults to 8% of the mean"
    )
    annotations_per_frame: float = Field(..., ge=0.0, title="Annotations Per Frame", description="Full-range dataset rate")
    count_scale: float = Field(
        1.0, ge=0.0, title="Count Scale", description="Multiplier applied on top of the area scaling (rare-class boost)"
    )
    moving_fraction: float = Field(0.0, ge=0.0, le=1.0, title="Moving Fraction", description="Share of objects given a nonzero velocity")

    @field_validator("mean_size")
    @classmethod
    def _mean_positive(cls, value):
        return _positive_triplet(value, "mean_size")

    @field_validator("size_std")
    @classmethod
    def _std_positive(cls, value):
        return value if value is None else _positive_triplet(value, "size_std")

    @property
    def std(self) -> tuple[float, float, float]:
        if self.size_std is not None:
            return self.size_std
        return tuple(0.08 * m for m in self.mean_size)


class NoiseSpec(FrozenModel):
    point_dropout: float = Field(0.1, ge=0.0, lt=1.0, title="Point Dropout", description="Probability of dropping a surface point")
    jitter_std: float = Field(0.02, ge=0.0, title="Jitter Std", description="Gaussian point jitter in meters")
    surface_density: float = Field(6.0, gt=0.0, title="Surface Density", description="Sampled points per square meter of box surface")
    min_points_per_box: int = Field(4, ge=1, title="Min Points Per Box", description="Floor points kept regardless of dropout")
    max_points_per_box: int = Field(256, ge=1, title="Max Points Per Box")
    clutter_points: int = Field(300, ge=0, title="Clutter Points", description="Ground returns scattered over the range")
    clutter_height_std: float = Field(0.05, ge=0.0, title="Clutter Height Std")


class IntensitySpec(FrozenModel):
    """Truncated-normal reflectance distribution of object and ground returns."""

    object_mean: float = Field(..., title="Object Mean")
    ground_mean: float = Field(..., title="Ground Mean")
    std: float = Field(..., gt=0.0, title="Std")
    low: float = Field(0.0, title="Low")
    high: float = Field(1.0, title="High")

    @model_validator(mode="after")
    def _bounds(self):
        if not self.low < self.high:
            raise ValueError(f"intensity bounds must satisfy low < high, got {self.low}, {self.high}")
        return self


class CameraSpec(FrozenModel):
    """Photometric perturbation of the camera-surrogate grid."""

    gain: float = Field(1.0, gt=0.0, title="Gain")
    bias: float = Field(0.0, title="Bias")
    noise_std: float = Field(0.05, ge=0.0, title="Noise Std")
    blur_sigma: float = Field(1.0, ge=0.0, title="Blur Sigma", description="Gaussian smoothing of occupancy, in cells")


class DomainSpec(FrozenModel):
    """Declarative description of one synthetic domain."""

    schema_: Literal["bda.domain_spec/1"] = Field(..., alias="schema", title="Schema")
    name: str = Field(..., title="Name")
    classes: list[ClassSpec] = Field(..., title="Classes")
    area_scale: float = Field(
        1.0, gt=0.0, title="Area Scale", description="Ratio of the synthetic BEV area to the dataset's, scaling all counts"
    )
    bev_range: float = Field(32.0, gt=0.0, title="BEV Range", description="Objects are placed within +/- this many meters")
    ground_height: float = Field(0.0, title="Ground Height", description="z of the ground plane in the sensor frame")
    record_ground_height: bool = Field(
        True, title="Record Ground Height", description="Whether frames carry the ground height for coordinate shifting"
    )
    speed_std: float = Field(0.0, ge=0.0, title="Speed Std", description="Std of moving-object speed in m/s; 0 disables velocity")
    noise: NoiseSpec = Field(default_factory=NoiseSpec, title="Noise")
    intensity: Optional[IntensitySpec] = Field(None, title="Intensity", description="None when the sensor reports no intensity")
    camera: CameraSpec = Field(default_factory=CameraSpec, title="Camera")

    model_config = FrozenModel.model_config | {"populate_by_name": True}

    @model_validator(mode="after")
    def _unique_classes(self):
        names = [c.raw_name for c in self.classes]
        if len(set(names)) != len(names):
            raise ValueError(f"domain {self.name} declares duplicate classes: {names}")
        return self

    @property
    def has_velocity(self) -> bool:
        return self.speed_std > 0.0

    def expected_count(self, class_spec: ClassSpec) -> float:
        return class_spec.annotations_per_frame * self.area_scale * class_spec.count_scale


class ClassMap(FrozenModel):
    """Mapping of raw dataset class names onto the canonical label set."""

    mapping: dict[str, CanonicalClass] = Field(..., title="Mapping", description="Raw class name to canonical class")

    def canonical(self, raw_name: str) -> str:
        """Canonical class for ``raw_name``.

        Raises:
            DataError: If the label has no entry in the map.
        """
        if raw_name in CANONICAL_CLASSES and raw_name not in self.mapping:
            return raw_name
        try:
            return self.mapping[raw_name]
        except KeyError:
            raise DataError(f"Class map has no entry for label '{raw_name}'") from None

    def check_total(self, raw_names) -> None:
        missing = sorted({n for n in raw_names if n not in self.mapping and n not in CANONICAL_CLASSES})
        if missing:
            raise DataError(f"Class map has no entry for labels {missing}")


def detection_class_index(label: str) -> Optional[int]:
    """Index of a canonical label among the detection classes; None for Others and unknown labels."""
    lowered = label.lower()
    for index, name in enumerate(DETECTION_CLASSES):
        if name.lower() == lowered:
            return index
    return None
