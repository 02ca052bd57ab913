"""Flat ``key = value`` configuration files.

One key per line, ``#`` starts a comment, values are kept as strings for
the consumer to cast.  Unknown keys are rejected at the consumer level;
this parser only enforces the line grammar and duplicate-freedom.
"""

from __future__ import annotations


class ConfigError(ValueError):
    """Malformed configuration line, duplicate key, or unknown key."""


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        value = value.strip()
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        if key in out:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def load_config(path: str) -> dict[str, str]:
    with open(path) as fh:
        return parse_config_text(fh.read(), source=path)
