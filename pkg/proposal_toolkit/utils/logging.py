"""Console and per-command file logging under the package logger."""
import logging
import sys
from pathlib import Path
from typing import Optional, Union

LOGGER_NAME = "proposal_toolkit"
LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
QUIET_LIBRARIES = ("matplotlib", "PIL")


def _level(level: str) -> int:
    return getattr(logging, level.upper(), logging.INFO)


def setup_logging(level: str = "INFO", log_file: Optional[Union[str, Path]] = None) -> logging.Logger:
    """Route package records to stdout, and to log_file when given."""
    log_level = _level(level)

    logger = logging.getLogger(LOGGER_NAME)
    logger.setLevel(log_level)
    for handler in list(logger.handlers):
        logger.removeHandler(handler)
        handler.close()

    console_handler = logging.StreamHandler(sys.stdout)
    console_handler.setLevel(log_level)
    console_handler.setFormatter(logging.Formatter(LOG_FORMAT))
    logger.addHandler(console_handler)

    if log_file:
        attach_log_file(log_file, level)

    # font discovery chatter at DEBUG
    for name in QUIET_LIBRARIES:
        logging.getLogger(name).setLevel(max(log_level, logging.WARNING))
    return logger


def attach_log_file(path: Union[str, Path], level: str = "INFO") -> Path:
    """Also write package records to path, replacing any previous content."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    file_handler = logging.FileHandler(path, mode="w")
    file_handler.setLevel(_level(level))
    file_handler.setFormatter(logging.Formatter(LOG_FORMAT))
    logging.getLogger(LOGGER_NAME).addHandler(file_handler)
    return path


def get_logger(name: Optional[str] = None) -> logging.Logger:
    """Get logger instance."""
    if name:
        return logging.getLogger(f"{LOGGER_NAME}.{name}")
    return logging.getLogger(LOGGER_NAME)
