from __future__ import annotations

from dataclasses import dataclass
import os
from pathlib import Path
from dotenv import load_dotenv

LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL")


@dataclass(frozen=True)
class AppConfig:
    """Process settings only; nothing here changes a decision or a verdict."""
    log_level: str = "WARNING"

    @staticmethod
    def from_env() -> "AppConfig":
        load_dotenv()  # Load .env file

        log_level = os.getenv("ACAC_LOG_LEVEL", "WARNING").strip().upper()
        if log_level not in LOG_LEVELS:
            raise RuntimeError(f"ACAC_LOG_LEVEL must be one of {', '.join(LOG_LEVELS)}. Got '{log_level}'.")

        return AppConfig(log_level=log_level)


def get_app_version() -> str:
    """Installed package version, or the one in pyproject.toml for a source checkout."""
    try:
        from importlib.metadata import PackageNotFoundError, version
        try:
            return version("activity-control")
        except PackageNotFoundError:
            pass

        pyproject_path = Path(__file__).parent.parent.parent / "pyproject.toml"
        if pyproject_path.exists():
            with open(pyproject_path, "r", encoding="utf-8") as f:
                for line in f:
                    line = line.strip()
                    if line.startswith("version ="):
                        return line.split("=", 1)[1].strip().strip('"').strip("'")
        return "unknown"
    except Exception:
        return "unknown"
