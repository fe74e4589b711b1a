from .domain_specs import (
    CLASS_MAP_MOCK,
    DETECTOR_CONFIG_MOCK,
    SOURCE_SPEC_MOCK_A,
    SOURCE_SPEC_MOCK_B,
    TARGET_SPEC_MOCK,
    MockExperiment,
)
from .scenes import BOX_MOCK_A, BOX_MOCK_B, FRAME_MOCK, detection_mock
