"""
Environment-driven settings and logging setup
"""
import json
import logging
import os
from pathlib import Path
from typing import Any, Dict, Optional

from dotenv import load_dotenv

from schemas.config import load_run_config

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
LOG_FILE = 'wavegenre.log'

_TRUE = ('1', 'true', 'yes', 'on')


def load_environment(dotenv_path: Optional[str] = None) -> bool:
    """Load .env into os.environ without overriding variables already set."""
    return load_dotenv(dotenv_path, override=False)


def env_flag(name: str, default: bool) -> bool:
    value = os.getenv(name)
    if value is None:
        return default
    return value.strip().lower() in _TRUE


def data_root() -> Optional[Path]:
    value = os.getenv('WAVEGENRE_DATA_ROOT')
    return Path(value) if value else None


def output_dir() -> Path:
    return Path(os.getenv('WAVEGENRE_OUTPUT_DIR', 'output'))


def celery_broker_url() -> str:
    return os.getenv('CELERY_BROKER_URL', 'redis://localhost:6379/0')


def celery_result_backend() -> str:
    return os.getenv('CELERY_RESULT_BACKEND', 'redis://localhost:6379/0')


def celery_eager() -> bool:
    return env_flag('WAVEGENRE_CELERY_EAGER', True)


def configure_logging(level: Optional[str] = None):
    level_name = (level or os.getenv('WAVEGENRE_LOG_LEVEL', 'INFO')).upper()
    logging.basicConfig(
        level=getattr(logging, level_name, logging.INFO),
        format=LOG_FORMAT,
        handlers=[
            logging.StreamHandler(),
            logging.FileHandler(LOG_FILE) if os.getenv('WAVEGENRE_ENV') == 'production' else logging.NullHandler()
        ],
        force=True,
    )


def read_config_file(path) -> Dict[str, Any]:
    path = Path(path)
    with open(path, 'r', encoding='utf-8') as f:
        raw = json.load(f)
    if not isinstance(raw, dict):
        raise ValueError(f"Config file {path} must hold a JSON object")
    return raw


def resolve_run_config(config_path=None, overrides: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
    """
    File values, then CLI overrides (None means "not given"), validated by RunConfigSchema.
    Raises:
        marshmallow.ValidationError: unknown keys or out-of-range values
    """
    raw = read_config_file(config_path) if config_path else {}
    raw.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return load_run_config(raw)
