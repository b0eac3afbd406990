import logging
import os
import sys

from colorama import Fore, Style


class CustomFormatter(logging.Formatter):
    """
    Custom Formatter to add colors to log messages based on their severity level.
    """
    LOG_COLORS = {
        logging.DEBUG: Fore.BLUE,
        logging.INFO: Fore.GREEN,
        logging.WARNING: Fore.YELLOW,
        logging.ERROR: Fore.RED,
        logging.CRITICAL: Fore.RED + Style.BRIGHT,
    }

    def __init__(self):
        super().__init__("%(asctime)s %(name)s %(levelname)s %(message)s")

    def format(self, record):
        log_color = self.LOG_COLORS.get(record.levelno, "")
        text = super().format(record)
        return f"{log_color}{text}{Style.RESET_ALL}"


def _default_level() -> int:
    level = logging.getLevelName(os.getenv("ICB_LOG_LEVEL", "INFO").upper())
    return level if isinstance(level, int) else logging.INFO


def get_logger(name: str, level: int | None = None) -> logging.Logger:
    """
    Creates and configures a logger with colorized output on stderr.

    Args:
        name (str): Name of the logger.
        level (int, optional): Logging level. Defaults to ``ICB_LOG_LEVEL`` or INFO.

    Returns:
        logging.Logger: Configured logger instance.
    """
    logger = logging.getLogger(name)
    logger.setLevel(level if level is not None else _default_level())

    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(CustomFormatter())

    # Clear existing handlers and set the custom handler
    logger.handlers = []
    logger.addHandler(handler)
    logger.propagate = False

    return logger


def set_level(level: int | str) -> None:
    """Applies ``level`` to every logger of this package."""
    if isinstance(level, str):
        level = logging.getLevelName(level.upper())
    for name, logger in logging.Logger.manager.loggerDict.items():
        if name.startswith("iot_compression_bench") and isinstance(logger, logging.Logger):
            logger.setLevel(level)
