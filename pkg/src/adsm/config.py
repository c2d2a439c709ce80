"""Flat ``key = value`` configuration files.

One assignment per line, ``#`` starts a comment, no includes. Keys name
fields of :class:`~adsm.training.TrainConfig`; model fields use a ``model.``
prefix (``model.width = 64``). Values are coerced to the field's type.
"""
from __future__ import annotations

import dataclasses
from pathlib import Path
from typing import Any

from .model import NcstConfig


class ConfigError(ValueError):
    pass


def parse_kv(text: str) -> dict[str, str]:
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        out[key] = value
    return out


def read_kv(path) -> dict[str, str]:
    try:
        return parse_kv(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc


def _coerce(value: str, current: Any, key: str):
    if isinstance(current, bool):
        low = value.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {value!r}")
    try:
        if isinstance(current, int):
            return int(value)
        if isinstance(current, float):
            return float(value)
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {value!r}") from exc
    return value


def apply_kv(obj, values: dict[str, str]):
    """Return a copy of dataclass ``obj`` with ``values`` applied (``model.*`` nests)."""
    top, nested = {}, {}
    names = {f.name for f in dataclasses.fields(obj)}
    for key, value in values.items():
        if "." in key:
            head, rest = key.split(".", 1)
            if head not in names:
                raise ConfigError(f"unknown config key {key!r}")
            nested.setdefault(head, {})[rest] = value
        elif key in names:
            top[key] = _coerce(value, getattr(obj, key), key)
        else:
            raise ConfigError(f"unknown config key {key!r}")
    for head, sub in nested.items():
        top[head] = apply_kv(getattr(obj, head), sub)
    try:
        return dataclasses.replace(obj, **top)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def dump_kv(obj, prefix: str = "") -> str:
    lines = []
    for f in dataclasses.fields(obj):
        v = getattr(obj, f.name)
        if dataclasses.is_dataclass(v):
            lines.append(dump_kv(v, prefix + f.name + "."))
        elif isinstance(v, (list, tuple)):
            lines.append(f"{prefix}{f.name} = {','.join(str(x) for x in v)}")
        else:
            lines.append(f"{prefix}{f.name} = {v}")
    return "\n".join(lines)


__all__ = ["ConfigError", "parse_kv", "read_kv", "apply_kv", "dump_kv", "NcstConfig"]
