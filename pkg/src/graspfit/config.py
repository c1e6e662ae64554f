"""Flat ``key = value`` config files.

Grammar, one entry per line::

    # comment (also allowed after a value)
    key = value

Keys are identifiers, blank lines are ignored, a repeated key is an error.
Values are parsed against the target dataclass's field types.
"""

from __future__ import annotations

import dataclasses
import re

_KEY = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")


class ConfigError(ValueError):
    def __init__(self, path, line, field, message):
        self.path, self.line, self.field = path, line, field
        where = f"{path}:{line}" if line else str(path)
        super().__init__(f"{where}: {field}: {message}" if field else f"{where}: {message}")


def read_config(path):
    """Returns {key: (raw value, line number)}."""
    out = {}
    with open(path) as fh:
        for n, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(path, n, None, "expected 'key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            if not _KEY.match(key):
                raise ConfigError(path, n, key or None, "bad key")
            if key in out:
                raise ConfigError(path, n, key, "duplicate key")
            out[key] = (value, n)
    return out


def parse_value(text, kind):
    if kind is bool:
        low = text.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {text!r}")
    if kind is int:
        return int(text)
    if kind is float:
        return float(text)
    if kind is tuple:
        return tuple(int(v) for v in re.split(r"[,\s]+", text) if v)
    return text


def fill(path, entries, fields):
    """Parse ``entries`` against ``fields`` ({key: type}); unknown keys are errors."""
    out = {}
    for key, (text, n) in entries.items():
        if key not in fields:
            raise ConfigError(path, n, key, "unknown key")
        try:
            out[key] = parse_value(text, fields[key])
        except ValueError as e:
            raise ConfigError(path, n, key, str(e)) from None
    return out


def dataclass_fields(cls):
    """{name: type} for the simple-typed fields of ``cls``."""
    types = {"int": int, "float": float, "str": str, "bool": bool, "tuple": tuple}
    out = {}
    for f in dataclasses.fields(cls):
        t = f.type if isinstance(f.type, str) else getattr(f.type, "__name__", "")
        if t in types:
            out[f.name] = types[t]
    return out
