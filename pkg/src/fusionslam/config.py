"""Bracketed key=value configuration files.

Each section maps onto a frozen dataclass; values are coerced to the type of
the field's default. Unknown sections and keys are rejected.
"""
from __future__ import annotations

import configparser
from dataclasses import fields, replace

import numpy as np

from .errors import ConfigError


def read_sections(text: str) -> dict[str, dict[str, str]]:
    cp = configparser.ConfigParser(interpolation=None, delimiters=("=",),
                                   comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    return {s: dict(cp.items(s)) for s in cp.sections()}


def _coerce(template, text: str, key: str):
    text = text.strip()
    try:
        if isinstance(template, bool):
            low = text.lower()
            if low not in ("true", "false", "1", "0", "yes", "no", "on", "off"):
                raise ValueError(text)
            return low in ("true", "1", "yes", "on")
        if isinstance(template, int):
            return int(text)
        if isinstance(template, float):
            return float(text)
        if isinstance(template, str):
            return text
        if isinstance(template, (tuple, list, np.ndarray)):
            return tuple(float(x) for x in text.replace(",", " ").split())
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {text!r}") from exc
    raise ConfigError(f"key {key} is not configurable from text")


def update_dataclass(obj, items: dict[str, str], section: str = ""):
    """Return ``obj`` with the string-valued ``items`` applied."""
    names = {f.name for f in fields(obj)}
    unknown = set(items) - names
    if unknown:
        raise ConfigError(f"unknown keys in [{section}]: {sorted(unknown)}")
    values = {k: _coerce(getattr(obj, k), v, f"{section}.{k}") for k, v in items.items()}
    try:
        return replace(obj, **values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (tuple, list, np.ndarray)):
        return " ".join(repr(float(x)) for x in value)
    return str(value)


def format_section(name: str, obj) -> list[str]:
    out = [f"[{name}]"]
    for f in fields(obj):
        value = getattr(obj, f.name)
        if isinstance(value, (bool, int, float, str, tuple, list, np.ndarray)):
            out.append(f"{f.name} = {format_value(value)}")
    return out
