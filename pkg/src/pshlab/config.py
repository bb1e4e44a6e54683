"""Flat key = value experiment configuration.

One key per line, '#' comments, no sections or nesting.  Every command
declares a schema of known keys with defaults; an unknown key is an error
naming the key, and parse errors carry the file line number.  Resolved
configurations are echoed back in a canonical form so a run's inputs are
always on disk next to its outputs.
"""
from __future__ import annotations


class ConfigError(Exception):
    """Bad configuration: parse failure or an unknown/invalid key."""


def parse_config(path) -> dict:
    """Read a flat key = value file into a string map."""
    raw = {}
    with open(path) as fh:
        for ln, line in enumerate(fh, start=1):
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            if "=" not in text:
                raise ConfigError(f"{path}:{ln}: expected key = value")
            key, _, val = text.partition("=")
            key = key.strip()
            if not key:
                raise ConfigError(f"{path}:{ln}: empty key")
            if key in raw:
                raise ConfigError(f"{path}:{ln}: duplicate key {key!r}")
            raw[key] = val.strip()
    return raw


# value parsers; each takes the raw string
def _bool(s: str) -> bool:
    low = s.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _floats(s: str) -> tuple:
    return tuple(float(p) for p in s.split(",") if p.strip())


def _ints(s: str) -> tuple:
    return tuple(int(p) for p in s.split(",") if p.strip())


def _strings(s: str) -> tuple:
    return tuple(p.strip() for p in s.split(",") if p.strip())


PARSERS = {"int": int, "float": float, "str": str, "bool": _bool,
           "floats": _floats, "ints": _ints, "strs": _strings}


def resolve_config(schema: dict, raw: dict, origin: str = "config") -> dict:
    """Apply defaults and typed parsing; reject keys outside the schema.

    schema maps key -> (type name, default).  A None default with no
    supplied value stays None.
    """
    out = {}
    for key, value in raw.items():
        if key not in schema:
            raise ConfigError(f"{origin}: unknown key {key!r}")
        kind, _ = schema[key]
        try:
            out[key] = PARSERS[kind](value)
        except (ValueError, TypeError) as err:
            raise ConfigError(f"{origin}: key {key!r}: {err}") from err
    for key, (kind, default) in schema.items():
        out.setdefault(key, default)
    return out


def render_config(resolved: dict) -> str:
    """Canonical echo of a resolved configuration, keys sorted."""
    lines = []
    for key in sorted(resolved):
        value = resolved[key]
        if value is None:
            continue
        if isinstance(value, tuple):
            value = ",".join(repr(v) if isinstance(v, float) else str(v)
                             for v in value)
        elif isinstance(value, float):
            value = repr(value)
        elif isinstance(value, bool):
            value = "true" if value else "false"
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"
