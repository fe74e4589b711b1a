import math

import numpy as np
import pytest

from bev_domain_adapt.domain_classifiers import (
    SOURCE_DOMAIN,
    TARGET_DOMAIN,
    HierarchicalDomainClassifiers,
    class_agnostic_heatmap,
    condition,
    domain_loss,
    domain_losses,
    total_loss,
)
from bev_domain_adapt.detector import DetectorModel, detection_loss
from bev_domain_adapt.exceptions import ShapeError
from bev_domain_adapt.mock import BOX_MOCK_A, DETECTOR_CONFIG_MOCK
from bev_domain_adapt.models import DomainAdaptationConfig
from bev_domain_adapt.tensor import Parameter, Tensor, gradient_check
from bev_domain_adapt.utils.seeding import make_rng


def _classifiers(**overrides):
    config = DomainAdaptationConfig(classifier_width=2, **overrides)
    return HierarchicalDomainClassifiers(4, 3, config, make_rng(0))


def _features(rng):
    return (
        Parameter(rng.normal(size=(3, 6, 6)), name='f2d'),
        Parameter(rng.normal(size=(3, 6, 6)), name='f3d'),
        Parameter(rng.normal(size=(4, 6, 6)), name='fmm'),
        Tensor(rng.uniform(0.05, 0.95, size=(3, 6, 6))),
    )


def test_class_agnostic_heatmap_takes_channel_max():
    heat = Tensor(np.array([0.1, 0.7, 0.3]).reshape(3, 1, 1))
    assert class_agnostic_heatmap(heat).data[0, 0] == pytest.approx(0.7)
    single = np.random.default_rng(0).uniform(size=(1, 4, 4))
    np.testing.assert_array_equal(class_agnostic_heatmap(Tensor(single)).data, single[0])


def test_condition_masks_features(rng):
    features = rng.normal(size=(2, 3, 3))
    np.testing.assert_array_equal(condition(Tensor(features), Tensor(np.ones((3, 3)))).data, features)
    np.testing.assert_array_equal(condition(Tensor(features), Tensor(np.zeros((3, 3)))).data, np.zeros((2, 3, 3)))
    mask = np.zeros((3, 3))
    mask[1, 2] = 1.0
    out = condition(Tensor(features), Tensor(mask)).data
    np.testing.assert_array_equal(out[:, 1, 2], features[:, 1, 2])
    assert np.count_nonzero(out[:, mask == 0]) == 0
    with pytest.raises(ShapeError):
        condition(Tensor(features), Tensor(np.ones((2, 2))))


def test_zeroed_classifiers_predict_one_half(rng):
    classifiers = _classifiers()
    for classifier in (classifiers.multi_modality, classifiers.camera, classifiers.lidar):
        classifier.zero_output()
    predictions = classifiers(*_features(rng))
    for p in (predictions.p_mm, predictions.p_2d, predictions.p_3d):
        assert p.shape == (6, 6)
        np.testing.assert_allclose(p.data, 0.5)


def test_zero_heatmap_gives_constant_multi_modality_map(rng):
    f2d, f3d, fmm, _ = _features(rng)
    predictions = _classifiers()(f2d, f3d, fmm, Tensor(np.zeros((3, 6, 6))))
    assert np.ptp(predictions.p_mm.data) == 0.0


def test_domain_loss_examples():
    assert domain_loss(Tensor(np.full((4, 4), 0.5)), SOURCE_DOMAIN).item() == pytest.approx(math.log(2.0))
    assert domain_loss(Tensor(np.full((4, 4), 0.5)), TARGET_DOMAIN).item() == pytest.approx(math.log(2.0))
    assert domain_loss(Tensor(np.ones((2, 2))), SOURCE_DOMAIN).item() < 1e-6
    p = np.array([[0.9, 0.8], [0.6, 0.7]])
    expected = -(math.log(0.9) + math.log(0.8) + math.log(0.6) + math.log(0.7)) / 4
    assert domain_loss(Tensor(p), SOURCE_DOMAIN).item() == pytest.approx(expected)


def test_total_loss_examples():
    assert total_loss(1.5, 0.4, 0.3, 0.2, 0.0).item() == pytest.approx(1.5)
    ln2 = math.log(2.0)
    assert total_loss(1.0, ln2, ln2, ln2, 0.1).item() == pytest.approx(1.0 + 0.3 * ln2)
    assert total_loss(0.0, 0.0, 0.0, 0.0, 0.1).item() == 0.0
    with pytest.raises(ValueError):
        total_loss(1.0, 0.0, 0.0, 0.0, -0.1)


def test_gradient_reversal_flips_feature_gradients(rng):
    classifiers = _classifiers()
    f2d, f3d, fmm, heat = _features(rng)

    def feature_grads(reverse):
        for t in (f2d, f3d, fmm):
            t.zero_grad()
        classifiers.zero_grad()
        l_mm, l_3d, l_2d = domain_losses(classifiers(f2d, f3d, fmm, heat, reverse=reverse), SOURCE_DOMAIN)
        total_loss(0.0, l_mm, l_3d, l_2d, 1.0).backward()
        return [t.grad.copy() for t in (f2d, f3d, fmm)]

    reversed_grads, plain_grads = feature_grads(True), feature_grads(False)
    for r, p in zip(reversed_grads, plain_grads):
        np.testing.assert_allclose(r, -p)
        assert np.abs(p).sum() > 0.0


def test_second_level_losses_do_not_reach_first_classifier(rng):
    classifiers = _classifiers()
    f2d, f3d, fmm, heat = _features(rng)
    _, l_3d, l_2d = domain_losses(classifiers(f2d, f3d, fmm, heat), TARGET_DOMAIN)
    total_loss(0.0, 0.0, l_3d, l_2d, 1.0).backward()
    assert all(p.grad is None for p in classifiers.multi_modality.parameters())
    assert fmm.grad is None
    assert f2d.grad is not None


def test_second_level_gradient_flag_reaches_first_classifier(rng):
    classifiers = _classifiers(second_level_gradient=True)
    f2d, f3d, fmm, heat = _features(rng)
    _, l_3d, l_2d = domain_losses(classifiers(f2d, f3d, fmm, heat), TARGET_DOMAIN)
    total_loss(0.0, 0.0, l_3d, l_2d, 1.0).backward()
    assert any(p.grad is not None and np.abs(p.grad).sum() > 0 for p in classifiers.multi_modality.parameters())


def test_plain_conditioning_ignores_heatmap(rng):
    classifiers = _classifiers(conditioning='plain')
    f2d, f3d, fmm, heat = _features(rng)
    a = classifiers(f2d, f3d, fmm, heat)
    b = classifiers(f2d, f3d, fmm, Tensor(np.zeros((3, 6, 6))))
    np.testing.assert_array_equal(a.p_mm.data, b.p_mm.data)
    np.testing.assert_array_equal(a.p_2d.data, b.p_2d.data)


def _detector_setup(rng, **overrides):
    config = DETECTOR_CONFIG_MOCK
    model = DetectorModel(config, seed=0, dtype=np.float64)
    da = DomainAdaptationConfig(classifier_width=2, **overrides)
    classifiers = HierarchicalDomainClassifiers(config.fusion_channels, config.encoder_channels, da, make_rng(0), dtype=np.float64)
    size = config.grid.size
    camera = rng.normal(size=(config.camera_channels, size, size))
    lidar = rng.normal(size=(config.lidar_channels, size, size))
    return model, classifiers, camera, lidar


def test_gradient_check_full_adaptation_loss(rng):
    # identity gates and a live second level keep autodiff equal to finite differences
    model, classifiers, camera, lidar = _detector_setup(rng, second_level_gradient=True)

    def loss():
        out = model(camera, lidar, 1)
        l_det = detection_loss(out.heatmap, out.regression, [(BOX_MOCK_A, 0)], model.config)
        predictions = classifiers(out.f2d, out.f3d, out.fmm, out.heatmap, reverse=False)
        return total_loss(l_det, *domain_losses(predictions, SOURCE_DOMAIN), 0.1)

    params = [p for name, p in model.named_parameters() if name.endswith('bias')]
    params += [p for name, p in classifiers.named_parameters() if name.endswith('bias')]
    params.append(model.embedding.table)
    assert gradient_check(loss, params) < 1e-4


def test_gradient_reversal_flips_backbone_gradients(rng):
    model, classifiers, camera, lidar = _detector_setup(rng)
    shared = [model.camera_encoder, model.lidar_encoder, model.fusion_backbone]

    def grads(reverse):
        model.zero_grad()
        classifiers.zero_grad()
        out = model(camera, lidar, 0)
        l_mm, l_3d, l_2d = domain_losses(classifiers(out.f2d, out.f3d, out.fmm, out.heatmap, reverse=reverse), TARGET_DOMAIN)
        total_loss(0.0, l_mm, l_3d, l_2d, 1.0).backward()
        backbone = {f'{i}.{name}': p.grad.copy() for i, m in enumerate(shared) for name, p in m.named_parameters() if p.grad is not None}
        heads = {name: p.grad.copy() for name, p in classifiers.named_parameters()}
        return backbone, heads

    (rev_backbone, rev_heads), (plain_backbone, plain_heads) = grads(True), grads(False)
    assert rev_backbone.keys() == plain_backbone.keys()
    assert any(np.abs(g).sum() > 0.0 for g in plain_backbone.values())
    for name, g in plain_backbone.items():
        np.testing.assert_allclose(rev_backbone[name], -g, rtol=1e-12, atol=1e-15)
    for name, g in plain_heads.items():
        np.testing.assert_allclose(rev_heads[name], g, rtol=1e-12, atol=1e-15)
