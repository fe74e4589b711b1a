import numpy as np
import pytest

from bev_domain_adapt.exceptions import DataError
from bev_domain_adapt.mock import CLASS_MAP_MOCK, FRAME_MOCK
from bev_domain_adapt.models import Box3D, ClassMap, Frame, LabeledBox, PTDAFlags
from bev_domain_adapt.ptda import (
    apply_ptda,
    canonical_targets,
    detection_targets,
    estimate_ground_height,
    remap_classes,
    remove_intensity,
    remove_velocity,
    shift_coordinates,
)


def _frame(points, boxes=(), ground_height=None):
    return Frame(domain_id=1, domain_name='mock', frame_id=0, seed=0, points=points, boxes=list(boxes), ground_height=ground_height)


def test_percentile_ground_estimate_and_shift():
    frame = _frame(np.array([[0.0, 0.0, -2.0], [1.0, 0.0, -1.8], [2.0, 0.0, 0.0]]))
    assert estimate_ground_height(frame.points) == pytest.approx(-2.0)
    shifted = shift_coordinates(frame)
    np.testing.assert_allclose(shifted.points[:, 2], [0.0, 0.2, 2.0])
    assert shifted.ground_height == 0.0


def test_shift_uses_recorded_ground_and_moves_boxes():
    shifted = shift_coordinates(FRAME_MOCK)
    np.testing.assert_allclose(shifted.points[:, 2], FRAME_MOCK.points[:, 2] + 1.8)
    assert shifted.boxes[0].box.center[2] == pytest.approx(0.8)
    assert shift_coordinates(shifted).points.tolist() == shifted.points.tolist()
    np.testing.assert_array_equal(FRAME_MOCK.points[:, 2], [-1.0, -0.5, -1.2, -1.8, -1.8])


def test_shift_with_zero_ground_is_identity():
    frame = _frame(np.array([[0.0, 0.0, 0.3]]), ground_height=0.0)
    assert shift_coordinates(frame).points.tolist() == frame.points.tolist()


def test_shift_skips_empty_frames():
    frame = _frame(np.zeros((0, 3)), ground_height=-1.0)
    assert shift_coordinates(frame) is frame


def test_remove_intensity():
    stripped = remove_intensity(FRAME_MOCK)
    assert stripped.points.shape == (5, 3)
    assert not stripped.has_intensity
    assert remove_intensity(stripped) is stripped


def test_remove_velocity():
    stripped = remove_velocity(FRAME_MOCK)
    assert not stripped.has_velocity
    assert len(stripped.boxes) == len(FRAME_MOCK.boxes)
    assert remove_velocity(stripped) is stripped


def test_remap_classes_and_targets():
    mapping = ClassMap(mapping={'car': 'Car', 'truck': 'Others', 'pedestrian': 'Pedestrian', 'traffic_cone': 'Others'})
    truck = LabeledBox(box=Box3D(center=(0.0, 0.0, 1.0), size=(7.0, 2.5, 3.0)), label='truck')
    frame = _frame(np.zeros((1, 3)), boxes=list(FRAME_MOCK.boxes) + [truck])
    remapped = remap_classes(frame, mapping)
    assert [b.label for b in remapped.boxes] == ['Car', 'Pedestrian', 'Others', 'Others']
    assert [label for _, label in detection_targets(remapped)] == [0, 1]


def test_unmapped_label_is_named():
    frame = _frame(np.zeros((1, 3)), boxes=[LabeledBox(box=Box3D(center=(0.0, 0.0, 0.5), size=(1.0, 1.0, 1.0)), label='animal')])
    with pytest.raises(DataError, match='animal'):
        remap_classes(frame, CLASS_MAP_MOCK)
    with pytest.raises(DataError, match='animal'):
        canonical_targets(frame, CLASS_MAP_MOCK)


def test_apply_ptda_order_and_roles():
    flags = PTDAFlags.parse('all')
    source = apply_ptda(FRAME_MOCK, flags, CLASS_MAP_MOCK)
    assert source.points.shape[1] == 3 and source.ground_height == 0.0
    assert not source.has_velocity
    assert [b.label for b in source.boxes] == ['Car', 'Pedestrian', 'Others']

    target = apply_ptda(FRAME_MOCK, flags, CLASS_MAP_MOCK, role='target')
    assert target.points.shape[1] == 3
    assert target.ground_height == FRAME_MOCK.ground_height
    assert target.has_velocity
    assert [b.label for b in target.boxes] == ['car', 'pedestrian', 'traffic_cone']


def test_apply_ptda_is_idempotent():
    flags = PTDAFlags.parse('shift,intensity,velocity,remap')
    once = apply_ptda(FRAME_MOCK, flags, CLASS_MAP_MOCK)
    twice = apply_ptda(once, flags, CLASS_MAP_MOCK)
    assert once.to_json() == twice.to_json()


def test_apply_ptda_needs_class_map_for_remap():
    with pytest.raises(DataError):
        apply_ptda(FRAME_MOCK, PTDAFlags(remap=True))


def test_no_strategies_leave_frame_untouched():
    assert apply_ptda(FRAME_MOCK, PTDAFlags.parse('none')).to_json() == FRAME_MOCK.to_json()


def test_canonical_targets_map_raw_labels():
    targets = canonical_targets(FRAME_MOCK, CLASS_MAP_MOCK)
    assert [label for _, label in targets] == [0, 1]
