"""
Environment-driven settings and logging setup
"""
import os
import sys
from pathlib import Path
from typing import Optional

from dotenv import load_dotenv
from loguru import logger
from pydantic import BaseModel, Field

# Load environment variables
load_dotenv()

MODEL_DIR_ENV = "SDPARSER_MODEL_DIR"
LOG_LEVEL_ENV = "SDPARSER_LOG_LEVEL"


class Settings(BaseModel):
    """Process-wide settings read from the environment (or a .env file)"""
    model_dir: Optional[Path] = Field(default=None, description="Directory that relative model paths resolve against")
    log_level: str = Field(default="INFO", description="Minimum level of the stderr log sink")

    @classmethod
    def from_env(cls) -> "Settings":
        model_dir = os.getenv(MODEL_DIR_ENV)
        return cls(
            model_dir=Path(model_dir) if model_dir else None,
            log_level=os.getenv(LOG_LEVEL_ENV, "INFO").upper(),
        )

    def resolve_model_path(self, path: Path) -> Path:
        """
        Resolve a model path against the default model directory

        Args:
            path: Path given on the command line

        Returns:
            The path itself when absolute or when no model directory is configured
        """
        if path.is_absolute() or self.model_dir is None:
            return path
        return self.model_dir / path


def configure_logging(level: str = "INFO") -> None:
    """Install a single stderr sink at the given level"""
    logger.remove()
    logger.add(
        sys.stderr,
        level=level.upper(),
        format="{time:YYYY-MM-DD HH:mm:ss} - {name} - {level} - {message}",
    )
