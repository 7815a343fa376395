"""
Experiment configuration files.

Configs are YAML documents validated into ``ExperimentConfig``. Every
validation problem is collected into one ConfigurationError whose
``violations`` name the offending field, e.g. ``partition.alpha: ...``.
"""
from __future__ import annotations

from pathlib import Path
from typing import Any

import structlog
import yaml
from pydantic import ValidationError

from simulation.shared.errors import ConfigurationError
from simulation.shared.schemas import ExperimentConfig

logger = structlog.get_logger(__name__)


def _violations(exc: ValidationError) -> list[str]:
    out: list[str] = []
    for err in exc.errors():
        loc = ".".join(str(part) for part in err["loc"]) or "<root>"
        out.append(f"{loc}: {err['msg']}")
    return out


def parse_config(data: Any, source: str = "<memory>") -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigurationError(f"{source}: top level must be a mapping")
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigurationError(f"invalid configuration in {source}", _violations(exc)) from exc


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"config file not found: {path}")
    try:
        data = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"{path} is not valid YAML", [str(exc)]) from exc
    config = parse_config(data, str(path))
    logger.info("config_loaded", path=str(path), name=config.name, strategies=len(config.strategies))
    return config


def config_to_dict(config: ExperimentConfig) -> dict[str, Any]:
    return config.model_dump(mode="json")


def save_config(config: ExperimentConfig, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(yaml.safe_dump(config_to_dict(config), sort_keys=False))
    return path
