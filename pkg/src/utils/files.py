"""
File helpers: atomic writes, CSV output and the run configuration file
"""

import configparser
import csv
import os
import tempfile
from contextlib import contextmanager
from typing import Any, Dict, Iterable, Mapping, Optional, Sequence

from src.utils.errors import ConfigError


@contextmanager
def atomic_write(path: str, mode: str = "w"):
    """
    Write to a temporary file next to `path` and rename it into place on success.

    Usage:
    with atomic_write("table.tab") as handle:
        handle.write(...)
    """
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp_path = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, mode, newline="" if "b" not in mode else None) as handle:
            yield handle
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.remove(tmp_path)
        raise


def write_csv(path: str, header: Sequence[str], rows: Iterable[Sequence[Any]], comments: Sequence[str] = ()):
    """Write rows to `path` atomically; `comments` go first as `#` lines"""
    with atomic_write(path) as handle:
        for line in comments:
            handle.write(f"# {line}\n")
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_format_cell(value) for value in row])


def _format_cell(value):
    if isinstance(value, float):
        return repr(value)
    return value


class RunConfig:
    """
    Key-value settings from a config file with `[section]` headers and `key = value` lines.

    Only keys declared in `schema` (section -> {key: type}) are accepted.
    """

    def __init__(self, schema: Mapping[str, Mapping[str, type]], values: Optional[Dict[str, Dict[str, Any]]] = None):
        self.schema = schema
        self.values = {section: dict(entries) for section, entries in (values or {}).items()}

    @classmethod
    def from_file(cls, path: str, schema: Mapping[str, Mapping[str, type]]) -> "RunConfig":
        if not os.path.isfile(path):
            raise ConfigError(f"Config file {path} does not exist")
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        try:
            parser.read(path)
        except configparser.Error as e:
            raise ConfigError(f"Cannot parse config file {path}: {e}")

        config = cls(schema)
        for section in parser.sections():
            for key, raw in parser.items(section):
                config.set(section, key, raw)
        return config

    def set(self, section: str, key: str, raw):
        if section not in self.schema:
            raise ConfigError(f"Unknown config section [{section}]")
        if key not in self.schema[section]:
            raise ConfigError(f"Unknown key '{key}' in section [{section}]")
        kind = self.schema[section][key]
        try:
            value = kind(raw) if not isinstance(raw, kind) else raw
        except (TypeError, ValueError):
            raise ConfigError(f"Invalid value '{raw}' for [{section}] {key}: expected {kind.__name__}")
        self.values.setdefault(section, {})[key] = value

    def get(self, section: str, key: str, default=None):
        return self.values.get(section, {}).get(key, default)

    def require(self, section: str, key: str):
        value = self.get(section, key)
        if value is None:
            raise ConfigError(f"Missing required setting [{section}] {key}")
        return value

    def check_paths(self, keys: Iterable[tuple]):
        """Fail early when input files named by (section, key) pairs are missing"""
        for section, key in keys:
            path = self.get(section, key)
            if path is not None and not os.path.isfile(path):
                raise ConfigError(f"File for [{section}] {key} does not exist: {path}")
