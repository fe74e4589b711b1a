from .base import (
    ROOT_DIR,
    PACKAGE_DIR,
    CONFIG_DIR,
    DEVELOPMENT_MODE,
    DEFAULT_PRECISION,
    DEFAULT_OUTPUT_DIR,
    DEFAULT_CONFIG_PATH,
    CANONICAL_CLASSES,
    DETECTION_CLASSES,
    EVAL_IOU_THRESHOLDS,
)
