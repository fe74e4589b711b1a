"""YAML config loading with pydantic validation."""
import logging
from pathlib import Path
from typing import Any, TypeVar

import yaml
from pydantic import BaseModel

from bev_domain_adapt.exceptions import DataError
from bev_domain_adapt.models import ClassMap, DomainSpec, ExperimentConfig
from bev_domain_adapt.utils.io import read_text_checked

logger = logging.getLogger(__name__)

ModelT = TypeVar("ModelT", bound=BaseModel)


def load_yaml(path: Path) -> dict[str, Any]:
    """Parses a YAML mapping.

    Raises:
        DataError: If the file is missing, oversized or not a mapping.
        yaml.YAMLError: On malformed YAML.
    """
    content = yaml.safe_load(read_text_checked(path))
    if not isinstance(content, dict):
        raise DataError(f"{path} must contain a YAML mapping, got {type(content).__name__}")
    return content


def load_model(path: Path, model: type[ModelT]) -> ModelT:
    return model.model_validate(load_yaml(path))


def load_domain_spec(path: Path) -> DomainSpec:
    spec = load_model(path, DomainSpec)
    logger.debug(f"Loaded domain spec '{spec.name}' from {path}")
    return spec


def load_class_map(path: Path) -> ClassMap:
    content = load_yaml(path)
    # a bare mapping is accepted as shorthand for {mapping: ...}
    if "mapping" not in content:
        content = {"mapping": content}
    return ClassMap.model_validate(content)


def load_experiment_config(path: Path) -> ExperimentConfig:
    """Loads an experiment file; relative data paths resolve against its directory."""
    path = Path(path)
    content = load_yaml(path)
    base = path.resolve().parent
    data = content.get("data")
    if isinstance(data, dict):
        data = dict(data)
        for key in ("target", "class_map"):
            if key in data:
                data[key] = str(_resolve(base, data[key]))
        if "sources" in data and isinstance(data["sources"], list):
            data["sources"] = [str(_resolve(base, s)) for s in data["sources"]]
        content["data"] = data
    if "output_dir" in content:
        content["output_dir"] = str(_resolve(base, content["output_dir"]))
    config = ExperimentConfig.model_validate(content)
    logger.info(f"Loaded experiment '{config.name}' from {path}: {config.num_sources} sources, seeds {config.seeds}")
    return config


def _resolve(base: Path, value) -> Path:
    candidate = Path(value)
    return candidate if candidate.is_absolute() else (base / candidate).resolve()
