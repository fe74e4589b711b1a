from pathlib import Path

import yaml

from ..models.domain import CameraSpec, ClassMap, ClassSpec, DomainSpec, IntensitySpec, NoiseSpec
from ..models.experiment import DetectorConfig, GridConfig

# Small 16 m x 16 m scenes with few points, so a frame rasterizes in milliseconds
NOISE_MOCK = NoiseSpec(
    point_dropout=0.1,
    jitter_std=0.02,
    surface_density=2.0,
    min_points_per_box=4,
    max_points_per_box=48,
    clutter_points=40,
)

TARGET_SPEC_MOCK = DomainSpec(
    schema="bda.domain_spec/1",
    name='target_mock',
    classes=[
        ClassSpec(raw_name='Vehicle', mean_size=(4.5, 2.0, 1.6), annotations_per_frame=2.0),
        ClassSpec(raw_name='Pedestrian', mean_size=(0.8, 0.8, 1.7), annotations_per_frame=1.0),
    ],
    bev_range=8.0,
    ground_height=0.0,
    noise=NOISE_MOCK,
    intensity=IntensitySpec(object_mean=0.3, ground_mean=0.1, std=0.08),
)

SOURCE_SPEC_MOCK_A = DomainSpec(
    schema="bda.domain_spec/1",
    name='source_mock_a',
    classes=[
        ClassSpec(raw_name='car', mean_size=(5.4, 2.1, 2.0), annotations_per_frame=2.0, moving_fraction=0.5),
        ClassSpec(raw_name='pedestrian', mean_size=(0.7, 0.7, 1.8), annotations_per_frame=1.0),
        ClassSpec(raw_name='traffic_cone', mean_size=(0.4, 0.4, 1.0), annotations_per_frame=1.0),
    ],
    bev_range=8.0,
    ground_height=-1.8,
    speed_std=3.0,
    noise=NOISE_MOCK,
    intensity=IntensitySpec(object_mean=0.6, ground_mean=0.35, std=0.1),
    camera=CameraSpec(gain=0.8, bias=0.1, noise_std=0.08, blur_sigma=1.5),
)

SOURCE_SPEC_MOCK_B = DomainSpec(
    schema="bda.domain_spec/1",
    name='source_mock_b',
    classes=[
        ClassSpec(raw_name='car', mean_size=(4.6, 1.9, 1.7), annotations_per_frame=2.0),
        ClassSpec(raw_name='bicycle', mean_size=(1.8, 0.6, 1.4), annotations_per_frame=1.0),
    ],
    bev_range=8.0,
    ground_height=-1.6,
    record_ground_height=False,
    noise=NOISE_MOCK,
    camera=CameraSpec(gain=1.2, bias=-0.05, blur_sigma=0.8),
)

CLASS_MAP_MOCK = ClassMap(mapping={
    'Vehicle': 'Car',
    'Pedestrian': 'Pedestrian',
    'car': 'Car',
    'pedestrian': 'Pedestrian',
    'bicycle': 'Cyclist',
    'traffic_cone': 'Others',
})

DETECTOR_CONFIG_MOCK = DetectorConfig(
    grid=GridConfig(size=16, bev_range=8.0),
    num_sources=2,
    encoder_channels=3,
    fusion_channels=4,
    head_channels=4,
    embedding_dim=2,
)


class MockExperiment:
    """Writes the mock domains and a two-epoch experiment into a directory."""

    def __init__(self, train_frames: int = 3, eval_frames: int = 2, epochs: int = 2, seeds: tuple[int, ...] = (0,)):
        self.train_frames = train_frames
        self.eval_frames = eval_frames
        self.epochs = epochs
        self.seeds = list(seeds)

    def experiment(self) -> dict:
        return {
            'name': 'mock',
            'data': {
                'target': 'domains/target_mock.yaml',
                'sources': ['domains/source_mock_a.yaml', 'domains/source_mock_b.yaml'],
                'class_map': 'class_map.yaml',
                'train_frames': self.train_frames,
                'eval_frames': self.eval_frames,
            },
            'ptda': {'shift': True, 'intensity': True, 'velocity': True, 'remap': True},
            'detector': DETECTOR_CONFIG_MOCK.model_dump(mode='json', exclude={'num_sources', 'lidar_channels'}),
            'adaptation': {'lambda': 0.1, 'classifier_width': 2},
            'training': {'epochs': self.epochs, 'lr': 0.005, 'lr_decay_epochs': []},
            'seeds': self.seeds,
            'output_dir': 'runs',
        }

    def write(self, directory: Path) -> Path:
        """Writes every file and returns the experiment config path.

        Args:
            directory (Path): Destination; created if missing.

        Returns:
            Path: Path of the experiment YAML.
        """
        directory = Path(directory)
        (directory / 'domains').mkdir(parents=True, exist_ok=True)
        for spec in (TARGET_SPEC_MOCK, SOURCE_SPEC_MOCK_A, SOURCE_SPEC_MOCK_B):
            content = spec.model_dump(mode='json', by_alias=True)
            (directory / 'domains' / f'{spec.name}.yaml').write_text(yaml.safe_dump(content, sort_keys=False))
        (directory / 'class_map.yaml').write_text(yaml.safe_dump(CLASS_MAP_MOCK.model_dump(mode='json')))
        path = directory / 'experiment.yaml'
        path.write_text(yaml.safe_dump(self.experiment(), sort_keys=False))
        return path
