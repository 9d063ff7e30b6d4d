from functools import lru_cache
from pathlib import Path
from typing import Optional

from pydantic_settings import BaseSettings, SettingsConfigDict


class EnvSettings(BaseSettings):

    # data and cache directory; overrides paths.data_dir in the YAML config
    TOKENFOLD_DATA_DIR: Optional[Path] = None
    TOKENFOLD_LOG_LEVEL: str = "INFO"

    model_config = SettingsConfigDict(
        env_file=".env",
        env_file_encoding="utf-8",
        extra="ignore",
    )


# one instance per process; tests call get_settings.cache_clear()
@lru_cache(maxsize=1)
def get_settings() -> EnvSettings:
    return EnvSettings()
