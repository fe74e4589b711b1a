import numpy as np
import pytest

from bev_domain_adapt.config.loader import load_experiment_config
from bev_domain_adapt.mock import MockExperiment
from bev_domain_adapt.pipeline import load_domains


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def experiment_path(tmp_path):
    return MockExperiment().write(tmp_path / 'configs')


@pytest.fixture
def experiment(experiment_path, tmp_path):
    config = load_experiment_config(experiment_path)
    return config.model_copy(update={'output_dir': tmp_path / 'runs'})


@pytest.fixture
def domains(experiment):
    return load_domains(experiment)
