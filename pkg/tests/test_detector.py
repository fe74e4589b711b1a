import math

import numpy as np
import pytest

from bev_domain_adapt.detector import (
    DetectorModel,
    build_targets,
    decode,
    detection_loss,
    embedding_update_gate,
    expand_embedding,
)
from bev_domain_adapt.exceptions import ShapeError
from bev_domain_adapt.mock import DETECTOR_CONFIG_MOCK
from bev_domain_adapt.models import Box3D
from bev_domain_adapt.tensor import Tensor
from bev_domain_adapt.utils.seeding import make_rng

GRID = DETECTOR_CONFIG_MOCK.grid


def _zero_inputs(config=DETECTOR_CONFIG_MOCK):
    size = config.grid.size
    return np.zeros((config.camera_channels, size, size)), np.zeros((config.lidar_channels, size, size))


def test_forward_on_zero_rasters_is_finite():
    model = DetectorModel(DETECTOR_CONFIG_MOCK, seed=0)
    out = model(*_zero_inputs(), 1)
    heat = out.heatmap.data
    assert heat.shape == (3, 16, 16)
    assert out.regression.shape == (8, 16, 16)
    assert np.all((heat > 0.0) & (heat < 1.0))
    assert np.isfinite(out.regression.data).all()
    assert [level.shape[1] for level in out.pyramid.levels()] == [16, 8, 4]


def test_forward_is_deterministic(rng):
    model = DetectorModel(DETECTOR_CONFIG_MOCK, seed=3)
    camera, lidar = rng.normal(size=(1, 16, 16)), rng.normal(size=(3, 16, 16))
    first, second = model(camera, lidar, 0), model(camera, lidar, 0)
    np.testing.assert_array_equal(first.heatmap.data, second.heatmap.data)
    np.testing.assert_array_equal(first.regression.data, second.regression.data)
    same_seed = DetectorModel(DETECTOR_CONFIG_MOCK, seed=3)
    np.testing.assert_array_equal(same_seed(camera, lidar, 0).heatmap.data, first.heatmap.data)


def test_heads_differ_by_source():
    model = DetectorModel(DETECTOR_CONFIG_MOCK, seed=0)
    a, b = model(*_zero_inputs(), 0), model(*_zero_inputs(), 1)
    assert not np.array_equal(a.regression.data, b.regression.data)


def test_invalid_source_index_and_raster_shape():
    model = DetectorModel(DETECTOR_CONFIG_MOCK, seed=0)
    with pytest.raises(ValueError):
        model(*_zero_inputs(), 2)
    with pytest.raises(ShapeError):
        model(np.zeros((1, 8, 8)), np.zeros((3, 16, 16)), 0)


def test_expand_embedding():
    out = expand_embedding(Tensor(np.array([[1.5, -2.0]])), 2, 2).data
    np.testing.assert_array_equal(out[0], np.full((2, 2), 1.5))
    np.testing.assert_array_equal(out[1], np.full((2, 2), -2.0))
    assert expand_embedding(Tensor(np.array([[0.25]])), 1, 1).data.shape == (1, 1, 1)


@pytest.mark.parametrize('epoch, total, expected', [(0, 10, True), (5, 10, False), (4, 9, True), (5, 9, False)])
def test_embedding_update_gate(epoch, total, expected):
    assert embedding_update_gate(epoch, total) is expected


def test_embedding_update_gate_rejects_out_of_range():
    with pytest.raises(ValueError):
        embedding_update_gate(10, 10)


def test_loss_vanishes_on_exact_targets():
    config = DETECTOR_CONFIG_MOCK.model_copy(update={'min_gaussian_radius': 0})
    boxes = [(Box3D(center=(1.3, -2.6, 0.9), size=(0.8, 0.7, 1.7), yaw=0.4), 1)]
    targets = build_targets(boxes, config)
    loss = detection_loss(Tensor(targets.heatmap), Tensor(targets.regression), boxes, config)
    assert loss.item() < 1e-3


def test_loss_without_ground_truth_penalizes_activations():
    config = DETECTOR_CONFIG_MOCK
    flat = detection_loss(Tensor(np.full((3, 16, 16), 1e-4)), Tensor(np.ones((8, 16, 16))), [], config)
    active = detection_loss(Tensor(np.full((3, 16, 16), 0.5)), Tensor(np.ones((8, 16, 16))), [], config)
    assert flat.item() < 1e-3
    assert active.item() > 1.0


def test_targets_skip_boxes_outside_grid():
    targets = build_targets([(Box3D(center=(20.0, 0.0, 0.5), size=(4.0, 2.0, 1.5)), 0)], DETECTOR_CONFIG_MOCK)
    assert not targets.mask.any()
    assert targets.heatmap.max() == 0.0


def test_decode_recovers_encoded_box():
    box = Box3D(center=(2.3, -1.7, 0.8), size=(4.2, 1.9, 1.6), yaw=-2.1)
    targets = build_targets([(box, 0)], DETECTOR_CONFIG_MOCK)
    detections = decode(targets.heatmap, targets.regression, GRID, 0.1, 10)
    assert len(detections) == 1
    found = detections[0]
    assert found.label == 0 and found.score == pytest.approx(1.0)
    np.testing.assert_allclose(found.box.center, box.center, atol=1e-5)
    np.testing.assert_allclose(found.box.size, box.size, atol=1e-5)
    assert found.box.yaw == pytest.approx(box.yaw, abs=1e-6)


def test_decode_round_trip_on_random_boxes():
    rng = make_rng(11)
    for _ in range(25):
        x, y = rng.uniform(-7.5, 7.5, size=2)
        box = Box3D(
            center=(float(x), float(y), float(rng.uniform(0.2, 1.5))),
            size=tuple(float(v) for v in rng.uniform(0.5, 5.0, size=3)),
            yaw=float(rng.uniform(-math.pi, math.pi)),
        )
        targets = build_targets([(box, 2)], DETECTOR_CONFIG_MOCK)
        (found,) = decode(targets.heatmap, targets.regression, GRID, 0.5, 10)
        assert abs(found.box.center[0] - box.center[0]) <= GRID.cell_size / 2
        assert abs(found.box.center[1] - box.center[1]) <= GRID.cell_size / 2
        error = abs(found.box.yaw - box.yaw) % (2 * math.pi)
        assert min(error, 2 * math.pi - error) < 1e-6


def test_decode_below_threshold_is_empty():
    assert decode(np.full((3, 16, 16), 0.05), np.zeros((8, 16, 16)), GRID, 0.1, 10) == []


def test_decode_sorts_peaks_by_score():
    heat = np.zeros((3, 16, 16))
    heat[0, 3, 3] = 0.6
    heat[1, 10, 12] = 0.9
    detections = decode(heat, np.zeros((8, 16, 16)), GRID, 0.1, 10, source=1)
    assert [d.score for d in detections] == pytest.approx([0.9, 0.6])
    assert [d.label for d in detections] == [1, 0]
    assert all(d.source == 1 for d in detections)
