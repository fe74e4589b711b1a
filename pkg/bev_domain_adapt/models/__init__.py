# Import order matters: box before frame, both before the configs that reference them
from .base import FrozenModel, ArrayModel, FloatArray, BoolArray
from .box import Box3D, Detection, LabeledBox, FUSED_SOURCE, normalize_yaw
from .frame import Frame, FrameDetections, FRAME_SCHEMA, DETECTIONS_SCHEMA
from .domain import ClassSpec, NoiseSpec, IntensitySpec, CameraSpec, DomainSpec, ClassMap, DOMAIN_SPEC_SCHEMA, detection_class_index
from .experiment import (
    GridConfig,
    DetectorConfig,
    DomainAdaptationConfig,
    TrainingConfig,
    PTDAFlags,
    DataConfig,
    ExperimentConfig,
    PTDA_STRATEGIES,
)
from .prototype_graph import PrototypeGraph, PROTOTYPE_GRAPH_SCHEMA
