"""
Logging Configuration Module

Logger tree under ``jpa``, phase banners, and the wall-clock helpers the
pipeline reads its per-region solve times from.
"""

import logging
import os
import sys
import time
from functools import wraps
from typing import Optional

ROOT_LOGGER_NAME = 'jpa'
DATE_FORMAT = '%Y-%m-%d %H:%M:%S'
CONSOLE_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
FILE_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(filename)s:%(lineno)d - %(message)s'
BANNER_WIDTH = 60


def _handler(handler: logging.Handler, level: int, fmt: str) -> logging.Handler:
    handler.setLevel(level)
    handler.setFormatter(logging.Formatter(fmt, datefmt=DATE_FORMAT))
    return handler


def setup_logging(verbose: bool = False, log_file: Optional[str] = None) -> logging.Logger:
    """
    Configure the root logger for one command-line run.

    Records go to stderr; stdout is reserved for tables and ``--json``
    payloads. Calling it again replaces the previous handlers.

    Args:
        verbose: DEBUG instead of INFO (per-region solve times, skipped regions)
        log_file: Also append records, with source locations, to this file

    Returns:
        The package root logger
    """
    level = logging.DEBUG if verbose else logging.INFO
    root = logging.getLogger()
    root.setLevel(level)
    root.handlers.clear()
    root.addHandler(_handler(logging.StreamHandler(sys.stderr), level, CONSOLE_FORMAT))

    if log_file:
        directory = os.path.dirname(log_file)
        if directory:
            os.makedirs(directory, exist_ok=True)
        root.addHandler(_handler(logging.FileHandler(log_file, encoding='utf-8'), level, FILE_FORMAT))

    logger = logging.getLogger(ROOT_LOGGER_NAME)
    logger.debug(f"Logging at {logging.getLevelName(level)}")
    return logger


def create_jpa_logger(name: str) -> logging.Logger:
    """Logger named ``jpa.<name>``."""
    return logging.getLogger(f'{ROOT_LOGGER_NAME}.{name}')


def log_phase_banner(logger: logging.Logger, title: str) -> None:
    """Frame a pipeline phase in the log."""
    logger.info("=" * BANNER_WIDTH)
    logger.info(title)
    logger.info("=" * BANNER_WIDTH)


class JpaLogger:
    """Operation-level logging for pipeline phases and long solver loops."""

    def __init__(self, name: str, progress_step: float = 10.0):
        self.logger = create_jpa_logger(name)
        self.progress_step = progress_step
        self._last_percent = float('-inf')

    def start_operation(self, operation: str, details: str = "") -> None:
        self._last_percent = float('-inf')
        self.logger.info(f"Starting {operation}" + (f" - {details}" if details else ""))

    def end_operation(self, operation: str, success: bool, details: str = "") -> None:
        msg = f"{operation} {'completed' if success else 'failed'}" + (f" - {details}" if details else "")
        (self.logger.info if success else self.logger.error)(msg)

    def progress(self, current: int, total: int, operation: str = "") -> None:
        """
        Log progress once per ``progress_step`` percent.

        The final step is always logged.
        """
        if total <= 0:
            return
        percent = 100.0 * current / total
        if current < total and percent - self._last_percent < self.progress_step:
            return
        self._last_percent = percent
        self.logger.info(f"Progress: {percent:.1f}% ({current}/{total})" + (f" - {operation}" if operation else ""))

    def warning_with_suggestion(self, message: str, suggestion: str) -> None:
        self.logger.warning(f"{message} - Suggestion: {suggestion}")

    def error_with_context(self, message: str, context: dict) -> None:
        self.logger.error(f"{message} - Context: {context}")


def log_performance(func):
    """Log how long a CLI command took, and the error class if it raised."""
    @wraps(func)
    def wrapper(*args, **kwargs):
        logger = create_jpa_logger('performance')
        start = time.perf_counter()
        try:
            result = func(*args, **kwargs)
        except Exception as e:
            logger.error(f"{func.__name__} raised {type(e).__name__} after "
                         f"{time.perf_counter() - start:.2f} s")
            raise
        logger.info(f"{func.__name__} completed in {time.perf_counter() - start:.2f} s")
        return result

    return wrapper


class OperationTimer:
    """
    Wall-clock timer; ``elapsed_ms`` is set on exit.

    ``quiet`` timers log at DEBUG so per-region solves do not flood the log.
    """

    def __init__(self, operation_name: str, quiet: bool = False):
        self.operation_name = operation_name
        self.quiet = quiet
        self.elapsed_ms = 0.0
        self._start = 0.0
        self.logger = create_jpa_logger('performance')

    def __enter__(self) -> 'OperationTimer':
        if not self.quiet:
            self.logger.info(f"Starting {self.operation_name}")
        self._start = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        self.elapsed_ms = (time.perf_counter() - self._start) * 1000.0
        if exc_type is not None:
            self.logger.error(f"{self.operation_name} failed after {self.elapsed_ms:.2f} ms: {exc_val}")
        elif self.quiet:
            self.logger.debug(f"{self.operation_name}: {self.elapsed_ms:.3f} ms")
        else:
            self.logger.info(f"{self.operation_name} completed in {self.elapsed_ms:.2f} ms")
