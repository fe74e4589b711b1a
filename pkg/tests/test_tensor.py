import json

import numpy as np
import pytest

from bev_domain_adapt.exceptions import DataError, NumericalError, ShapeError
from bev_domain_adapt.tensor import (
    SGD,
    Conv2d,
    Parameter,
    Tensor,
    default_dtype,
    get_default_dtype,
    gradient_check,
    load_checkpoint,
    save_checkpoint,
)
from bev_domain_adapt.tensor import functional as F

TOLERANCE = 1e-5


def _param(rng, *shape, name=None):
    return Parameter(rng.normal(size=shape), name=name, dtype=np.float64)


def test_gradient_check_elementwise_chain(rng):
    a = _param(rng, 3, 4, name='a')
    b = _param(rng, 3, 4, name='b')
    f = lambda: F.mean(F.mul(F.sigmoid(a), F.sub(F.scale(b, 0.5), F.relu(a))))  # noqa: E731
    assert gradient_check(f, [a, b]) < TOLERANCE


def test_gradient_check_conv_stride_and_padding(rng):
    x = _param(rng, 2, 7, 7, name='x')
    w = _param(rng, 3, 2, 3, 3, name='w')
    bias = _param(rng, 3, name='bias')
    for stride, padding in ((1, 1), (2, 1), (1, 0)):
        f = lambda: F.tensor_sum(F.sigmoid(F.conv2d(x, w, bias, stride=stride, padding=padding)))  # noqa: E731
        assert gradient_check(f, [x, w, bias]) < TOLERANCE


def test_gradient_check_resize_concat_and_conditioning(rng):
    low = _param(rng, 2, 8, 8, name='low')
    high = _param(rng, 2, 2, 2, name='high')
    heat = _param(rng, 3, 8, 8, name='heat')

    def f():
        merged = F.concat([low, F.bilinear_resize(high, 8, 8)], axis=0)
        gate = F.channel_max(F.sigmoid(heat))
        return F.mean(F.condition(merged, gate))

    assert gradient_check(f, [low, high, heat]) < TOLERANCE


def test_gradient_check_losses(rng):
    logits = _param(rng, 2, 5, 5, name='logits')
    target = np.zeros((2, 5, 5))
    target[0, 2, 2] = 1.0
    target[0, 1, 2] = 0.6
    regression = _param(rng, 8, 5, 5, name='regression')
    mask = np.zeros((5, 5), dtype=bool)
    mask[2, 2] = True

    def f():
        p = F.sigmoid(logits)
        return F.add(F.add(F.focal_loss(p, target), F.masked_l1(regression, np.ones((8, 5, 5)), mask)), F.bce(p, 1))

    assert gradient_check(f, [logits, regression]) < TOLERANCE


def test_gradient_check_embedding_row(rng):
    table = _param(rng, 3, 4, name='table')
    f = lambda: F.mean(F.sigmoid(F.expand_row(F.take(table, slice(1, 2)), 3, 3)))  # noqa: E731
    assert gradient_check(f, [table]) < TOLERANCE


def test_grl_is_identity_forward_and_negates_backward(rng):
    x = _param(rng, 2, 3)
    y = F.grl(x)
    np.testing.assert_array_equal(y.data, x.data)
    F.tensor_sum(F.scale(y, 2.0)).backward()
    np.testing.assert_array_equal(x.grad, np.full((2, 3), -2.0))


def test_double_grl_restores_the_gradient(rng):
    x = _param(rng, 3, 4)
    w = rng.normal(size=(3, 4))
    F.tensor_sum(F.mul(F.grl(F.grl(x)), Tensor(w, dtype=np.float64))).backward()
    np.testing.assert_array_equal(x.grad, w)


def test_grl_backward_leaves_forward_values_untouched(rng):
    x = _param(rng, 2, 5)
    before = x.data.copy()
    y = F.grl(F.sigmoid(x))
    forward = y.data.copy()
    F.tensor_sum(y).backward()
    np.testing.assert_array_equal(x.data, before)
    np.testing.assert_array_equal(y.data, forward)
    np.testing.assert_array_equal(y.data, F.sigmoid(Tensor(before, dtype=np.float64)).data)


def test_stop_gradient_blocks_backward(rng):
    x = _param(rng, 4)
    y = _param(rng, 4)
    F.tensor_sum(F.add(F.stop_gradient(x), y)).backward()
    assert x.grad is None
    np.testing.assert_array_equal(y.grad, np.ones(4))


def test_shared_node_gradients_accumulate(rng):
    x = _param(rng, 3)
    F.tensor_sum(F.mul(x, x)).backward()
    np.testing.assert_allclose(x.grad, 2.0 * x.data)


def test_backward_needs_gradient_for_non_scalar(rng):
    x = _param(rng, 2, 2)
    with pytest.raises(ShapeError):
        F.relu(x).backward()


def test_shape_mismatch_raises():
    with pytest.raises(ShapeError):
        F.add(Tensor(np.zeros(3)), Tensor(np.zeros(4)))
    with pytest.raises(ShapeError):
        F.condition(Tensor(np.zeros((2, 4, 4))), Tensor(np.zeros((3, 3))))


def test_bce_rejects_soft_labels():
    with pytest.raises(ValueError):
        F.bce(Tensor(np.full((2, 2), 0.5)), 0.5)


def test_bce_of_half_is_log_two():
    loss = F.bce(Tensor(np.full((3, 3), 0.5)), 0)
    assert loss.item() == pytest.approx(np.log(2.0))


def test_gradient_check_rejects_float32():
    x = Parameter(np.ones(2), dtype=np.float32)
    with pytest.raises(ValueError):
        gradient_check(lambda: F.tensor_sum(x), [x])


def test_gradient_check_reports_non_finite_loss():
    x = Parameter(np.array([np.inf, 1.0]), dtype=np.float64)
    with pytest.raises(NumericalError):
        gradient_check(lambda: F.tensor_sum(x), [x])


def test_default_dtype_context_restores():
    before = get_default_dtype()
    with default_dtype('f32'):
        assert Tensor([1.0, 2.0]).dtype == np.float32
    assert get_default_dtype() == before


def test_sgd_frozen_parameters_stay_bit_identical(rng):
    layer = Conv2d(1, 2, 3, rng, dtype=np.float64)
    optimizer = SGD(layer.named_parameters('conv.'), lr=0.1)
    optimizer.set_frozen('conv.weight', True)
    before = layer.weight.data.copy()
    x = Tensor(rng.normal(size=(1, 5, 5)))
    for _ in range(3):
        optimizer.zero_grad()
        F.tensor_sum(layer(x)).backward()
        optimizer.step()
    np.testing.assert_array_equal(layer.weight.data, before)
    assert np.any(layer.bias.data != 0.0)


def test_sgd_step_decay():
    optimizer = SGD([('p', Parameter(np.zeros(1)))], lr=0.1, decay_epochs=[2, 4], gamma=0.5)
    assert optimizer.set_epoch(1) == pytest.approx(0.1)
    assert optimizer.set_epoch(2) == pytest.approx(0.05)
    assert optimizer.set_epoch(5) == pytest.approx(0.025)


def test_sgd_raises_on_non_finite_gradient():
    p = Parameter(np.zeros(2))
    p.grad = np.array([np.nan, 0.0])
    with pytest.raises(NumericalError):
        SGD([('p', p)], lr=0.1).step()


def test_checkpoint_roundtrip_and_truncation(tmp_path, rng):
    layer = Conv2d(2, 3, 3, rng, dtype=np.float64)
    stem = tmp_path / 'ckpt' / 'model'
    save_checkpoint(stem, layer.state_dict(), {'note': 'mock'})
    state, metadata = load_checkpoint(stem)
    assert metadata == {'note': 'mock'}
    np.testing.assert_allclose(state['weight'], layer.weight.data, rtol=1e-6, atol=1e-7)

    clone = Conv2d(2, 3, 3, np.random.default_rng(99), dtype=np.float64)
    clone.load_state_dict(state)
    np.testing.assert_allclose(clone.weight.data, layer.weight.data, rtol=1e-6, atol=1e-7)

    blob = stem.with_suffix('.bin')
    blob.write_bytes(blob.read_bytes()[:-4])
    with pytest.raises(DataError):
        load_checkpoint(stem)


@pytest.mark.parametrize('corrupt', [
    lambda manifest: manifest.pop('total_bytes'),
    lambda manifest: manifest['parameters'][0].update(offset=manifest['total_bytes']),
    lambda manifest: manifest['parameters'][0].pop('shape'),
])
def test_checkpoint_with_corrupt_manifest(tmp_path, rng, corrupt):
    stem = tmp_path / 'model'
    save_checkpoint(stem, Conv2d(2, 3, 3, rng).state_dict())
    path = stem.with_suffix('.json')
    manifest = json.loads(path.read_text())
    corrupt(manifest)
    path.write_text(json.dumps(manifest))
    with pytest.raises(DataError):
        load_checkpoint(stem)


def test_load_state_dict_rejects_mismatch(rng):
    layer = Conv2d(2, 3, 3, rng)
    with pytest.raises(ShapeError):
        layer.load_state_dict({'weight': np.zeros((3, 2, 3, 3))})
    with pytest.raises(ShapeError):
        layer.load_state_dict({'weight': np.zeros((3, 2, 1, 1)), 'bias': np.zeros(3)})
