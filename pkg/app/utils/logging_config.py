"""
Logging configuration for the Veli correction toolkit.
"""

import os
import logging
import sys
from logging.handlers import RotatingFileHandler
from typing import Optional

from app.exceptions import ConfigError


def setup_logging(log_file: Optional[str] = 'logs/veli.log', log_level: str = 'INFO'):
    """
    Set up logging for the application.

    Logs go to stdout and, unless ``log_file`` is None, to a rotating file.

    Args:
        log_file (str, optional): Path to the log file, or None to log to stdout only.
        log_level (str): Logging level (DEBUG, INFO, WARNING, ERROR, CRITICAL).

    Returns:
        logging.Logger: Configured root logger.
    """
    numeric_level = getattr(logging, log_level.upper(), None)
    if not isinstance(numeric_level, int):
        raise ConfigError("log_level", f"invalid log level: {log_level}")

    logger = logging.getLogger()
    logger.setLevel(numeric_level)

    # Remove existing handlers to avoid duplicate logs
    for handler in logger.handlers[:]:
        logger.removeHandler(handler)

    verbose_formatter = logging.Formatter(
        '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
    )
    simple_formatter = logging.Formatter(
        '%(levelname)s: %(message)s'
    )

    if log_file:
        log_dir = os.path.dirname(log_file)
        if log_dir:
            os.makedirs(log_dir, exist_ok=True)
        file_handler = RotatingFileHandler(
            log_file,
            maxBytes=10 * 1024 * 1024,  # 10 MB
            backupCount=5
        )
        file_handler.setLevel(numeric_level)
        file_handler.setFormatter(verbose_formatter)
        logger.addHandler(file_handler)

    console_handler = logging.StreamHandler(sys.stdout)
    console_handler.setLevel(numeric_level)
    console_handler.setFormatter(simple_formatter)
    logger.addHandler(console_handler)

    logger.debug(f"Logging configured with level {log_level}")

    return logger
