import numpy as np

from ..models.box import Box3D, Detection, LabeledBox
from ..models.frame import Frame

BOX_MOCK_A = Box3D(center=(2.0, 1.0, 0.8), size=(4.0, 2.0, 1.6), yaw=0.0)
BOX_MOCK_B = Box3D(center=(-3.0, -2.0, 0.85), size=(0.8, 0.8, 1.7), yaw=0.5)

# Source-style frame: sensor 1.8 m above the ground, raw labels, velocities, intensity
FRAME_MOCK = Frame(
    domain_id=1,
    domain_name='source_mock_a',
    frame_id=0,
    seed=7,
    points=np.array([
        [2.0, 1.0, -1.0, 0.6],
        [2.5, 1.2, -0.5, 0.7],
        [-3.0, -2.0, -1.2, 0.5],
        [5.0, 5.0, -1.8, 0.3],
        [-6.0, 4.0, -1.8, 0.4],
    ]),
    boxes=[
        LabeledBox(box=BOX_MOCK_A.translated(dz=-1.8), label='car', velocity=(1.0, 0.0)),
        LabeledBox(box=BOX_MOCK_B.translated(dz=-1.8), label='pedestrian', velocity=(0.0, 0.0)),
        LabeledBox(box=Box3D(center=(6.0, -6.0, -1.3), size=(0.4, 0.4, 1.0)), label='traffic_cone'),
    ],
    ground_height=-1.8,
)


def detection_mock(box: Box3D, score: float, label: int = 0, source: int = 0) -> Detection:
    return Detection(box=box, score=score, label=label, source=source)
