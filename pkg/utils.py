"""
Utility Functions Module

Contains helper functions used across the joint association tool.
"""

import hashlib
import json
import os
import logging
from typing import Any, Iterable, List, Optional

import numpy as np

from errors import ConfigError, DataError

logger = logging.getLogger('jpa.utils')


def canonical_json(data: Any) -> str:
    """
    Serialize data to a canonical JSON string.

    Keys are sorted and separators fixed so equal data always hashes equally.
    """
    return json.dumps(data, sort_keys=True, separators=(',', ':'), allow_nan=False)


def sha256_hex(data: Any) -> str:
    """SHA-256 of the canonical JSON form of ``data``."""
    return hashlib.sha256(canonical_json(data).encode('utf-8')).hexdigest()


def write_json(path: str, data: Any) -> None:
    """
    Write a JSON document with stable formatting.

    Args:
        path: Destination file path
        data: JSON-serializable document

    Raises:
        DataError: the file or its directory cannot be written
    """
    try:
        directory = os.path.dirname(path)
        if directory:
            os.makedirs(directory, exist_ok=True)
        with open(path, 'w', encoding='utf-8') as f:
            json.dump(data, f, sort_keys=True, indent=1, allow_nan=False)
            f.write('\n')
    except OSError as e:
        raise DataError(f"Cannot write {path}: {e.strerror or e}", {'path': path}) from e


def read_json(path: str) -> Any:
    """
    Read a JSON document.

    Raises:
        DataError: file missing or not valid JSON
    """
    if not os.path.exists(path):
        raise DataError(f"File not found: {path}", {'path': path})
    try:
        with open(path, 'r', encoding='utf-8') as f:
            return json.load(f)
    except json.JSONDecodeError as e:
        raise DataError(f"Invalid JSON in {path}: {e}", {'path': path}) from e
    except OSError as e:
        raise DataError(f"Cannot read {path}: {e.strerror or e}", {'path': path}) from e


def ensure_writable_dir(path: str) -> str:
    """
    Create a directory if needed and check that it is writable.

    Returns:
        Absolute, normalized directory path

    Raises:
        ConfigError: the directory cannot be created or written
    """
    normalized = os.path.abspath(os.path.normpath(path))
    try:
        os.makedirs(normalized, exist_ok=True)
        test_file = os.path.join(normalized, '.write_test')
        with open(test_file, 'w') as f:
            f.write('test')
        os.remove(test_file)
    except OSError as e:
        raise ConfigError(f"Cannot write to directory: {normalized}: {e}", {'path': normalized}) from e
    return normalized


def require_dir(path: str) -> str:
    """Return the absolute path of an existing directory or raise ConfigError."""
    normalized = os.path.abspath(os.path.normpath(path))
    if not os.path.isdir(normalized):
        raise ConfigError(f"Directory does not exist: {normalized}", {'path': normalized})
    return normalized


def median_or_none(values: Iterable[float]) -> Optional[float]:
    """Median of the values, or None for an empty sequence."""
    values = list(values)
    if not values:
        return None
    return float(np.median(values))


def parse_grid(text: str, cast=float) -> List[Any]:
    """
    Parse a comma-separated grid such as ``0,0.1,0.2``.

    Raises:
        ConfigError: empty grid or unparsable entry
    """
    items = [item.strip() for item in text.split(',') if item.strip()]
    if not items:
        raise ConfigError("Empty parameter grid")
    try:
        return [cast(item) for item in items]
    except ValueError as e:
        raise ConfigError(f"Invalid grid entry in '{text}': {e}") from e
