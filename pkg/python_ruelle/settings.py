import os
from typing import Optional

from dotenv import load_dotenv

load_dotenv()


def default_threads() -> Optional[int]:
    """Worker cap for counting, from RUELLE_THREADS. None lets duckdb decide."""
    value = os.environ.get("RUELLE_THREADS")
    if not value:
        return None
    threads = int(value)
    if threads < 1:
        raise ValueError("RUELLE_THREADS must be a positive integer")
    return threads


def default_output_dir() -> str:
    return os.environ.get("RUELLE_OUTPUT_DIR", "runs")


def default_log_level() -> str:
    return os.environ.get("RUELLE_LOG_LEVEL", "INFO").upper()
