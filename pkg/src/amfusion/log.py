"""
Logging setup shared by the CLI and scripts.
"""

import logging
import os

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s %(message)s"


def setup_logging(level=None):
    """
    Configure the root logger once.

    Args:
        level: Level name or number. Falls back to the LOG_LEVEL environment
            variable, then INFO.

    Returns:
        The resolved numeric level.
    """
    level = level or os.getenv("LOG_LEVEL", "INFO")
    if isinstance(level, str):
        resolved = logging.getLevelName(level.upper())
        if not isinstance(resolved, int):
            resolved = logging.INFO
    else:
        resolved = int(level)
    logging.basicConfig(level=resolved, format=LOG_FORMAT, force=True)
    return resolved
