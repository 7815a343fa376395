"""Runtime settings read from the environment (prefix ``FEDLAB_``)."""
from __future__ import annotations

from functools import lru_cache

from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict


class LabSettings(BaseSettings):
    model_config = SettingsConfigDict(env_prefix="FEDLAB_")

    output_root: str = "results"
    threads: int = Field(default=1, ge=1, description="concurrent sweep jobs")
    client_workers: int = Field(default=1, ge=1, description="parallel clients inside a round")
    log_level: str = "INFO"
    log_json: bool = True


@lru_cache(maxsize=1)
def get_settings() -> LabSettings:
    return LabSettings()
