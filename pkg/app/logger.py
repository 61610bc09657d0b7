import logging
import sys
import time
from pathlib import Path
from typing import Optional

import structlog
from pythonjsonlogger import jsonlogger

from app import settings

LOG_FORMAT = "%(asctime)s [%(levelname)s] %(name)s: %(message)s"
JSON_LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s %(message)s"

# Structlog processors
processors = [
    structlog.stdlib.filter_by_level,
    structlog.stdlib.add_log_level,
    structlog.stdlib.add_logger_name,
    structlog.processors.TimeStamper(fmt="%Y-%m-%d %H:%M:%S"),
    structlog.processors.StackInfoRenderer(),
    structlog.processors.format_exc_info,
    structlog.processors.UnicodeDecoder(),
    structlog.processors.JSONRenderer(),
]

# Configure structlog
structlog.configure(
    processors=processors,
    context_class=dict,
    logger_factory=structlog.stdlib.LoggerFactory(),
    wrapper_class=structlog.stdlib.BoundLogger,
    cache_logger_on_first_use=True,
)

_HANDLER_TAG = "_polcomp_handler"


def configure_logging(
    level: Optional[str] = None,
    log_dir: Optional[Path] = None,
    to_file: Optional[bool] = None,
) -> None:
    """
    Attach console and (optionally) file handlers to the root logger.

    Safe to call repeatedly: handlers installed by a previous call are replaced.
    Console output goes to stderr so that CLI results on stdout stay parseable.
    """
    level_name = (level or settings.LOG_LEVEL).upper()
    log_dir = log_dir or settings.LOG_DIR
    to_file = settings.LOG_TO_FILE if to_file is None else to_file

    root_logger = logging.getLogger()
    for handler in list(root_logger.handlers):
        if getattr(handler, _HANDLER_TAG, False):
            root_logger.removeHandler(handler)
            handler.close()

    handlers: list[logging.Handler] = []
    console = logging.StreamHandler(sys.stderr)
    console.setFormatter(logging.Formatter(LOG_FORMAT))
    handlers.append(console)

    if to_file:
        log_dir.mkdir(parents=True, exist_ok=True)
        text_handler = logging.FileHandler(log_dir / "polcomp.log")
        text_handler.setFormatter(logging.Formatter(LOG_FORMAT))
        handlers.append(text_handler)

        json_handler = logging.FileHandler(log_dir / "polcomp.json.log")
        json_handler.setFormatter(
            jsonlogger.JsonFormatter(JSON_LOG_FORMAT, timestamp=True)
        )
        handlers.append(json_handler)

    for handler in handlers:
        setattr(handler, _HANDLER_TAG, True)
        root_logger.addHandler(handler)
    root_logger.setLevel(getattr(logging, level_name, logging.INFO))


def get_logger(name: str) -> structlog.stdlib.BoundLogger:
    """
    Get a logger instance with the given name.

    Args:
        name: The logger name, typically __name__ of the calling module

    Returns:
        A structured logger instance
    """
    return structlog.get_logger(name)


class TimingLogger:
    """Context manager for timing operations and logging the duration."""

    def __init__(self, logger: structlog.stdlib.BoundLogger, operation: str, **kwargs):
        self.logger = logger
        self.operation = operation
        self.kwargs = kwargs
        self.start_time: float = 0.0
        self.duration: float = 0.0

    def __enter__(self):
        self.start_time = time.perf_counter()
        self.logger.info(f"{self.operation} started", **self.kwargs)
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        self.duration = time.perf_counter() - self.start_time
        if exc_type is not None:
            self.logger.error(
                f"{self.operation} failed",
                exc_info=(exc_type, exc_val, exc_tb),
                duration=self.duration,
                **self.kwargs,
            )
        else:
            self.logger.info(
                f"{self.operation} completed", duration=self.duration, **self.kwargs
            )
