import os
from dotenv import load_dotenv
from pathlib import Path


DEVELOPMENT_MODE = False
ROOT_DIR = Path(__file__).resolve().parent.parent.parent
PACKAGE_DIR = Path(__file__).resolve().parent.parent
CONFIG_DIR = ROOT_DIR / 'configs'


if os.getenv('ENVIRONMENT') == 'production' or not DEVELOPMENT_MODE:
    env_file = ROOT_DIR / 'env' / 'production.env'
else:
    env_file = ROOT_DIR / 'env' / 'development.env'

load_dotenv(dotenv_path=env_file)

# Numerics
DEFAULT_PRECISION = os.getenv('BDA_PRECISION', 'f64')
if DEFAULT_PRECISION not in ('f32', 'f64'):
    raise ValueError(f"BDA_PRECISION must be 'f32' or 'f64', got '{DEFAULT_PRECISION}'")

# Artifacts
DEFAULT_OUTPUT_DIR = Path(os.getenv('BDA_OUTPUT_DIR', str(ROOT_DIR / 'runs')))
DEFAULT_CONFIG_PATH = CONFIG_DIR / 'experiment.yaml'
MAX_INPUT_BYTES = int(os.getenv('BDA_MAX_INPUT_BYTES', str(512 * 1024 * 1024)))

LOG_LEVEL = os.getenv('BDA_LOG_LEVEL', 'INFO').upper()

# Canonical label space after class remapping; detector targets use the first three.
CANONICAL_CLASSES = ('Car', 'Pedestrian', 'Cyclist', 'Others')
DETECTION_CLASSES = CANONICAL_CLASSES[:3]

# Relaxed 3D IoU thresholds used when the target is the Waymo-like domain.
EVAL_IOU_THRESHOLDS = {'Car': 0.5, 'Pedestrian': 0.3, 'Cyclist': 0.3}
