import json

import numpy as np
import pytest

from bev_domain_adapt.exceptions import DataError, NumericalError
from bev_domain_adapt.mock import DETECTOR_CONFIG_MOCK, SOURCE_SPEC_MOCK_A, SOURCE_SPEC_MOCK_B, TARGET_SPEC_MOCK
from bev_domain_adapt.models import DomainAdaptationConfig, TrainingConfig
from bev_domain_adapt.synth import generate_domain
from bev_domain_adapt.training import Trainer, load_detector, prepare_frames, source_schedule

TRAINING = TrainingConfig(epochs=2, lr=0.005, lr_decay_epochs=[])
ADAPTATION = DomainAdaptationConfig(classifier_width=2)


@pytest.fixture(scope='module')
def prepared():
    def frames(spec, domain_id):
        return prepare_frames(generate_domain(spec, domain_id, 3, seed=0), DETECTOR_CONFIG_MOCK, spec.camera)

    return [frames(SOURCE_SPEC_MOCK_A, 1), frames(SOURCE_SPEC_MOCK_B, 2)], frames(TARGET_SPEC_MOCK, 0)


def _trainer(adaptation=ADAPTATION, training=TRAINING, seed=0):
    return Trainer(DETECTOR_CONFIG_MOCK, adaptation, training, seed, quiet=True)


def test_prepared_frames_match_detector_layout(prepared):
    sources, target = prepared
    assert sources[1][0].lidar.shape == (3, 16, 16)
    assert not sources[1][0].lidar[2].any()
    assert target[0].camera.shape == (1, 16, 16)
    assert all(label in (0, 1, 2) for _, label in sources[0][0].targets)


def test_source_schedule(rng):
    assert source_schedule(TRAINING, 2, 5, rng) == [0, 1, 0, 1, 0]
    weighted = TRAINING.model_copy(update={'source_schedule': 'weighted', 'source_weights': [1.0, 0.0]})
    assert source_schedule(weighted, 2, 6, rng) == [0] * 6


def test_step_reports_every_term(prepared):
    sources, target = prepared
    trainer = _trainer()
    trainer.set_epoch(0)
    source_terms = trainer.step(sources[0][0], 0, 1)
    target_terms = trainer.step(target[0], 0, 0)
    assert source_terms['l_det'] > 0.0 and source_terms['l_mm'] > 0.0
    assert target_terms['l_det'] == 0.0 and target_terms['l_2d'] > 0.0
    assert all(np.isfinite(v) for v in source_terms.values())
    assert 'grad_norm' in source_terms


def test_fit_runs_every_epoch(prepared):
    sources, target = prepared
    trainer = _trainer()
    summary = trainer.fit(sources, target)
    assert list(summary.index) == [0, 1]
    # two sources x three frames per epoch, one target step after each source step
    assert len(trainer.records) == 2 * 6 * 2
    assert {r['kind'] for r in trainer.records} == {'source', 'target'}
    assert np.isfinite(summary.to_numpy()).all()


def test_fit_is_deterministic(prepared):
    sources, target = prepared
    first, second = _trainer(), _trainer()
    first.fit(sources, target)
    second.fit(sources, target)
    np.testing.assert_array_equal(first.model.embedding.table.data, second.model.embedding.table.data)
    assert [r['total'] for r in first.records] == [r['total'] for r in second.records]


def test_source_only_training_skips_target_steps(prepared):
    sources, target = prepared
    trainer = _trainer(adaptation=ADAPTATION.model_copy(update={'lambda_': 0.0}))
    trainer.fit(sources, [])
    assert {r['kind'] for r in trainer.records} == {'source'}
    assert all(r['l_mm'] == 0.0 for r in trainer.records)


def test_embedding_is_frozen_in_second_half(prepared):
    sources, target = prepared
    trainer = _trainer()
    trainer.set_epoch(1)
    assert trainer.model.embedding.frozen
    table = trainer.model.embedding.table.data.copy()
    weights = trainer.model.heads[0].shared.weight.data.copy()
    trainer.step(sources[0][0], 0, 1)
    np.testing.assert_array_equal(trainer.model.embedding.table.data, table)
    assert not np.array_equal(trainer.model.heads[0].shared.weight.data, weights)
    trainer.set_epoch(0)
    assert not trainer.model.embedding.frozen


def test_fit_validates_inputs(prepared):
    sources, target = prepared
    with pytest.raises(DataError):
        _trainer().fit(sources[:1], target)
    with pytest.raises(DataError):
        _trainer().fit([sources[0], []], target)
    with pytest.raises(DataError):
        _trainer().fit(sources, [])


def test_non_finite_loss_raises(prepared):
    sources, _ = prepared
    trainer = _trainer()
    trainer.model.heads[0].heatmap.bias.data[...] = np.nan
    with pytest.raises(NumericalError):
        trainer.step(sources[0][0], 0, 1)


def test_checkpoint_restores_detector(prepared, tmp_path):
    sources, target = prepared
    trainer = _trainer()
    trainer.fit(sources, target)
    trainer.save(tmp_path / 'checkpoint', metadata={'run': 'mock'})
    trainer.write_log(tmp_path / 'train_log.jsonl')

    model, metadata = load_detector(tmp_path / 'checkpoint')
    assert metadata['run'] == 'mock' and metadata['adaptation']['lambda'] == pytest.approx(0.1)
    frame = target[0]
    expected = trainer.model(frame.camera, frame.lidar, 1).heatmap.data
    np.testing.assert_allclose(model(frame.camera, frame.lidar, 1).heatmap.data, expected, atol=1e-4)

    lines = (tmp_path / 'train_log.jsonl').read_text().splitlines()
    assert len(lines) == len(trainer.records)
    assert set(json.loads(lines[0])) >= {'epoch', 'kind', 'total', 'l_det', 'lr'}


def test_load_detector_rejects_foreign_checkpoint(tmp_path):
    from bev_domain_adapt.tensor import save_checkpoint

    save_checkpoint(tmp_path / 'other', {'w': np.zeros(2)}, {'note': 'no detector'})
    with pytest.raises(DataError):
        load_detector(tmp_path / 'other')
