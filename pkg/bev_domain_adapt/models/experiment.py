import math
from pathlib import Path
from typing import Literal, Optional

from pydantic import Field, field_validator, model_validator

from bev_domain_adapt.config.base import DEFAULT_OUTPUT_DIR, DEFAULT_PRECISION, DETECTION_CLASSES, EVAL_IOU_THRESHOLDS
from bev_domain_adapt.models.base import FrozenModel

PTDA_STRATEGIES = ("shift", "intensity", "velocity", "remap")


class GridConfig(FrozenModel):
    size: int = Field(64, ge=4, title="Grid Size", description="BEV cells per side")
    bev_range: float = Field(32.0, gt=0.0, title="BEV Range", description="Grid covers [-range, range) meters on x and y")

    @field_validator("size")
    @classmethod
    def _divisible(cls, value):
        if value % 4:
            raise ValueError(f"grid size must be divisible by 4 for the stride-4 feature level, got {value}")
        return value

    @property
    def cell_size(self) -> float:
        return 2.0 * self.bev_range / self.size


class DetectorConfig(FrozenModel):
    grid: GridConfig = Field(default_factory=GridConfig, title="Grid")
    num_classes: int = Field(len(DETECTION_CLASSES), ge=1, title="Number of Classes")
    num_sources: int = Field(2, ge=1, title="Number of Sources", description="One fusion head and embedding row per source")
    camera_channels: int = Field(1, ge=1, title="Camera Channels")
    lidar_channels: int = Field(3, ge=2, le=3, title="LiDAR Channels", description="2 without intensity, 3 with it")
    encoder_channels: int = Field(8, ge=1, title="Encoder Channels")
    fusion_channels: int = Field(16, ge=1, title="Fusion Channels")
    head_channels: int = Field(16, ge=1, title="Head Channels")
    embedding_dim: int = Field(16, ge=1, title="Embedding Dim")
    heatmap_prior: float = Field(0.1, gt=0.0, lt=1.0, title="Heatmap Prior", description="Initial heatmap probability")
    min_gaussian_radius: int = Field(1, ge=0, title="Min Gaussian Radius", description="Lower bound on the splat radius in cells")
    regression_weight: float = Field(0.25, ge=0.0, title="Regression Weight")
    score_threshold: float = Field(0.1, ge=0.0, le=1.0, title="Score Threshold")
    max_detections: int = Field(100, ge=1, title="Max Detections")


class DomainAdaptationConfig(FrozenModel):
    lambda_: float = Field(0.1, ge=0.0, alias="lambda", title="Lambda", description="Weight of the domain losses")
    conditioning: Literal["hierarchical", "plain"] = Field("hierarchical", title="Conditioning")
    second_level_gradient: bool = Field(
        False, title="Second Level Gradient", description="Let gradients reach the first classifier through the second-level gate"
    )
    classifier_width: int = Field(8, ge=1, title="Classifier Width")

    model_config = FrozenModel.model_config | {"populate_by_name": True}

    @property
    def enabled(self) -> bool:
        return self.lambda_ > 0.0


class TrainingConfig(FrozenModel):
    epochs: int = Field(10, ge=1, title="Epochs")
    steps_per_epoch: Optional[int] = Field(
        None, ge=1, title="Steps Per Epoch", description="Source steps per epoch; defaults to one pass over the largest source for every source"
    )
    lr: float = Field(0.01, gt=0.0, title="Learning Rate")
    momentum: float = Field(0.9, ge=0.0, lt=1.0, title="Momentum")
    weight_decay: float = Field(1e-4, ge=0.0, title="Weight Decay")
    lr_decay_epochs: list[int] = Field(default_factory=lambda: [7], title="LR Decay Epochs")
    lr_gamma: float = Field(0.1, gt=0.0, le=1.0, title="LR Gamma")
    max_grad_norm: Optional[float] = Field(10.0, gt=0.0, title="Max Grad Norm")
    source_schedule: Literal["round_robin", "weighted"] = Field("round_robin", title="Source Schedule")
    source_weights: Optional[list[float]] = Field(None, title="Source Weights", description="Sampling weights for the weighted schedule")
    target_ratio: int = Field(1, ge=0, title="Target Ratio", description="Target steps interleaved per source step")
    freeze_embedding: bool = Field(True, title="Freeze Embedding", description="Freeze the domain embedding in the second half")

    @field_validator("source_weights")
    @classmethod
    def _weights_positive(cls, value):
        if value is not None and (not value or any(w < 0 for w in value) or sum(value) <= 0):
            raise ValueError(f"source_weights must be non-negative with a positive sum, got {value}")
        return value

    @property
    def freeze_epoch(self) -> int:
        return math.ceil(self.epochs / 2)


class PTDAFlags(FrozenModel):
    shift: bool = Field(False, title="Coordinate Shifting")
    intensity: bool = Field(False, title="Intensity Removal")
    velocity: bool = Field(False, title="Velocity Removal")
    remap: bool = Field(False, title="Class Remapping")

    @classmethod
    def parse(cls, text: str) -> "PTDAFlags":
        """Parses a comma list such as ``"shift,intensity"``; ``""``/``"none"`` disables all."""
        names = [t.strip() for t in text.split(",") if t.strip() and t.strip() != "none"]
        if names == ["all"]:
            names = list(PTDA_STRATEGIES)
        unknown = [n for n in names if n not in PTDA_STRATEGIES]
        if unknown:
            raise ValueError(f"Unknown PTDA strategies {unknown}; choose from {list(PTDA_STRATEGIES)}")
        return cls(**{n: True for n in names})

    def label(self) -> str:
        names = [n for n in PTDA_STRATEGIES if getattr(self, n)]
        return ",".join(names) if names else "none"


class DataConfig(FrozenModel):
    sources: list[Path] = Field(..., min_length=1, title="Sources", description="Domain spec files of the labeled source domains")
    target: Path = Field(..., title="Target", description="Domain spec file of the unlabeled target domain")
    class_map: Path = Field(..., title="Class Map")
    train_frames: int = Field(60, ge=1, title="Train Frames", description="Frames generated per domain for training")
    eval_frames: int = Field(30, ge=1, title="Eval Frames", description="Held-out target frames for evaluation")


class ExperimentConfig(FrozenModel):
    """Top-level declarative experiment description."""

    name: str = Field("experiment", title="Name")
    data: DataConfig = Field(..., title="Data")
    ptda: PTDAFlags = Field(default_factory=PTDAFlags, title="PTDA")
    detector: DetectorConfig = Field(default_factory=DetectorConfig, title="Detector")
    adaptation: DomainAdaptationConfig = Field(default_factory=DomainAdaptationConfig, title="Domain Adaptation")
    training: TrainingConfig = Field(default_factory=TrainingConfig, title="Training")
    seeds: list[int] = Field(..., min_length=1, title="Seeds", description="Explicit master seeds; one run per seed")
    precision: Literal["f32", "f64"] = Field(DEFAULT_PRECISION, title="Precision")
    output_dir: Path = Field(DEFAULT_OUTPUT_DIR, title="Output Directory")
    ablations: list[Literal["plain_dc", "oracle"]] = Field(default_factory=list, title="Ablations")
    iou_thresholds: dict[str, float] = Field(default_factory=lambda: dict(EVAL_IOU_THRESHOLDS), title="IoU Thresholds")
    fusion_iou_threshold: float = Field(0.1, gt=0.0, lt=1.0, title="Fusion IoU Threshold")
    fusion_method: Literal["seed", "components"] = Field("seed", title="Fusion Clustering")

    @model_validator(mode="before")
    @classmethod
    def _default_num_sources(cls, values):
        # one head per configured source unless given explicitly
        if not isinstance(values, dict) or not isinstance(values.get("data"), dict):
            return values
        sources = values["data"].get("sources")
        detector = values.get("detector")
        if sources is not None and (detector is None or (isinstance(detector, dict) and "num_sources" not in detector)):
            values = {**values, "detector": {**(detector or {}), "num_sources": len(sources)}}
        return values

    @field_validator("seeds")
    @classmethod
    def _seeds_non_negative(cls, value):
        if any(s < 0 for s in value):
            raise ValueError(f"seeds must be non-negative, got {value}")
        return value

    @field_validator("iou_thresholds")
    @classmethod
    def _thresholds_in_range(cls, value):
        for name, threshold in value.items():
            if not 0.0 < threshold <= 1.0:
                raise ValueError(f"IoU threshold for {name} must lie in (0, 1], got {threshold}")
        return value

    @model_validator(mode="after")
    def _consistent(self):
        if self.detector.num_sources != len(self.data.sources):
            raise ValueError(
                f"detector.num_sources={self.detector.num_sources} but {len(self.data.sources)} source domains are configured"
            )
        if self.training.source_weights is not None and len(self.training.source_weights) != len(self.data.sources):
            raise ValueError("training.source_weights needs one weight per source domain")
        return self

    @property
    def num_sources(self) -> int:
        return len(self.data.sources)
