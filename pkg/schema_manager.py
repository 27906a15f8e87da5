#!/usr/bin/env python3
"""
Schema Manager for the joint association tool

Loads the versioned file-format descriptors from JSON and checks documents
against them: format name, major version and required keys.
"""

import logging
import os
from typing import Any, Dict, List, NamedTuple, Optional, Tuple

from errors import DataError, FormatVersionError, StructuralError
from utils import read_json

DEFAULT_SCHEMA_PATH = os.path.join(os.path.dirname(os.path.abspath(__file__)), 'schema', 'jpa-formats.json')


class FormatInfo(NamedTuple):
    """Format descriptor container."""
    name: str
    major: int
    owner: str
    description: str
    required_keys: List[str]

    @property
    def tag(self) -> str:
        return f"{self.name}/{self.major}"


def parse_format_tag(tag: Any) -> Tuple[str, int]:
    """
    Split ``"<name>/<major>"``.

    Raises:
        FormatVersionError: malformed tag
    """
    if not isinstance(tag, str) or tag.count('/') != 1:
        raise FormatVersionError(f"Malformed format tag: {tag!r}", {'format': tag})
    name, major = tag.split('/')
    if not major.isdigit():
        raise FormatVersionError(f"Malformed format version in {tag!r}", {'format': tag})
    return name, int(major)


class SchemaManager:
    """Manages the file-format descriptors."""

    def __init__(self, schema_path: str = DEFAULT_SCHEMA_PATH):
        """
        Initialize schema manager.

        Args:
            schema_path: Path to the formats JSON file
        """
        self.schema_path = schema_path
        self.schema_data: Optional[Dict[str, Any]] = None
        self.logger = logging.getLogger('jpa.schema_manager')

    def load_schema(self) -> Dict[str, Any]:
        """
        Load the descriptors, once.

        Raises:
            DataError: missing or malformed descriptor file
        """
        if self.schema_data is None:
            data = read_json(self.schema_path)
            if 'formats' not in data or 'metadata' not in data:
                raise DataError(f"Descriptor file lacks 'formats' or 'metadata': {self.schema_path}")
            self.schema_data = data
            self.logger.debug(f"Format descriptors loaded from: {self.schema_path}")
        return self.schema_data

    def get_format(self, name: str) -> FormatInfo:
        """
        Descriptor of one format.

        Raises:
            FormatVersionError: unknown format name
        """
        formats = self.load_schema()['formats']
        if name not in formats:
            raise FormatVersionError(f"Unknown file format: {name}", {'format': name})
        entry = formats[name]
        return FormatInfo(name=name, major=int(entry['major']), owner=entry['owner'],
                          description=entry['description'], required_keys=list(entry['required_keys']))

    def format_tag(self, name: str) -> str:
        """Current tag (``name/major``) written by this version."""
        return self.get_format(name).tag

    def list_formats(self) -> List[str]:
        return sorted(self.load_schema()['formats'])

    def check_document(self, document: Any, expected: str, source: str = '') -> FormatInfo:
        """
        Check a loaded document against its descriptor.

        Args:
            document: Parsed JSON document
            expected: Format name the caller wants
            source: File name for messages

        Raises:
            FormatVersionError: other format, or unknown major version
            StructuralError: required keys missing
        """
        where = f" in {source}" if source else ''
        if not isinstance(document, dict):
            raise StructuralError(f"Expected a JSON object{where}", {'path': source})
        name, major = parse_format_tag(document.get('format'))
        info = self.get_format(expected)
        if name != expected:
            raise FormatVersionError(f"Expected format {info.tag}, found {name}/{major}{where}",
                                     {'path': source, 'format': document.get('format')})
        if major != info.major:
            raise FormatVersionError(f"Unsupported major version {major} of {name}{where}; "
                                     f"this version reads {info.tag}",
                                     {'path': source, 'format': document.get('format')})
        missing = [key for key in info.required_keys if key not in document]
        if missing:
            raise StructuralError(f"{info.tag} document{where} lacks keys: {missing}", {'path': source})
        return info


_default_manager: Optional[SchemaManager] = None


def default_schema_manager() -> SchemaManager:
    """
    Shared schema manager with default settings.

    Returns:
        SchemaManager instance
    """
    global _default_manager
    if _default_manager is None:
        _default_manager = SchemaManager()
    return _default_manager
