"""Logging configuration."""

import logging

from robustvol.config import LOG_LEVEL


def setup_logging(level: str | None = None):
    """Configure logging for the command-line tool."""
    logging.basicConfig(
        level=getattr(logging, (level or LOG_LEVEL).upper(), logging.INFO),
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
    )
