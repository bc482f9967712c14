# Environment-driven settings (.env at the project root)

import os
import logging
from functools import lru_cache
from pathlib import Path
from typing import Literal

from dotenv import load_dotenv
from pydantic import BaseModel, field_validator

# Load overrides from the project root
project_root = Path(__file__).parent.parent
load_dotenv(project_root / ".env")


class Settings(BaseModel):
    """Process-wide knobs read from TPOOL_* environment variables"""
    log_level: str = "INFO"
    output_dir: str = "runs"
    dtype: Literal["float64", "float32"] = "float64"

    @field_validator("log_level")
    @classmethod
    def _known_level(cls, value: str) -> str:
        if not isinstance(logging.getLevelName(value.upper()), int):
            raise ValueError(f"unknown log level '{value}'")
        return value.upper()

    @property
    def numeric_log_level(self) -> int:
        return logging.getLevelName(self.log_level)


@lru_cache(maxsize=1)
def get_settings() -> Settings:
    """Get the global settings instance"""
    return Settings(
        log_level=os.getenv("TPOOL_LOG_LEVEL", "INFO"),
        output_dir=os.getenv("TPOOL_OUTPUT_DIR", "runs"),
        dtype=os.getenv("TPOOL_DTYPE", "float64"),
    )
