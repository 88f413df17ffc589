from pathlib import Path
from typing import Any, Dict, List, Optional

from dotenv import dotenv_values, load_dotenv
from pydantic_settings import BaseSettings, SettingsConfigDict

from ionhom.core.errors import ConfigError

# Load environment variables from .env file
load_dotenv()


class Settings(BaseSettings):
    """Process-level settings, read from the environment (prefix IONHOM_)"""

    model_config = SettingsConfigDict(env_prefix="IONHOM_", env_file=".env", case_sensitive=True, extra="ignore")

    # Logging
    LOG_LEVEL: str = "INFO"
    LOG_FILE: Optional[str] = "logs/ionhom.log"

    # Artifacts
    OUTPUT_DIR: str = "runs"
    CSV_FLOAT_FORMAT: str = "%.12e"

    # Application name
    APP_NAME: str = "ionhom"

    # Version
    VERSION: str = "0.1.0"


# Create settings instance
settings = Settings()


def read_flat_config(path: Path) -> Dict[str, str]:
    """
    Read a flat ``key = value`` run configuration file

    Args:
        path: Path of the configuration file

    Returns:
        Mapping of dotted keys to raw string values (comments and blanks dropped)

    Raises:
        FileNotFoundError: if the file does not exist
        ConfigError: if a line names a key without "= value"
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"Configuration file not found: {path}")

    raw = dotenv_values(path)
    bare = sorted(key.strip() for key, value in raw.items() if value is None)
    if bare:
        raise ConfigError(f"keys without a value in {path}: {bare}", {"path": str(path), "keys": bare})
    return {key.strip(): str(value).strip() for key, value in raw.items()}


def load_config(path: Path):
    """
    Load and validate a run configuration file

    Args:
        path: Path of the configuration file

    Returns:
        A validated SimulationConfig
    """
    from ionhom.models.config import SimulationConfig

    return SimulationConfig.from_flat(read_flat_config(path))


def parse_list(value: Any) -> List[str]:
    """Split a comma separated config value into stripped items"""
    if isinstance(value, (list, tuple)):
        return [str(item).strip() for item in value]
    return [item.strip() for item in str(value).split(",") if item.strip()]
