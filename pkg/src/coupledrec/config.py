"""Flat key-value run configuration with dotted section names.

Format, one binding per line::

    # comment
    grid.dims = 32 32
    channel.1.kind = kl

Chosen over nested formats so configs diff line-by-line. Values are plain
strings; typed accessors convert on demand and report the offending line on
failure.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)


@dataclass
class RunConfig:
    values: dict[str, str] = field(default_factory=dict)
    lines: dict[str, int] = field(default_factory=dict)  # key -> source line

    def _line(self, key: str) -> int | None:
        return self.lines.get(key)

    def has(self, key: str) -> bool:
        return key in self.values

    def get_str(self, key: str, default: str | None = None) -> str:
        if key in self.values:
            return self.values[key]
        if default is None:
            raise ConfigError(f"missing required key {key!r}")
        return default

    def get_int(self, key: str, default: int | None = None) -> int:
        if key not in self.values:
            if default is None:
                raise ConfigError(f"missing required key {key!r}")
            return default
        try:
            return int(self.values[key])
        except ValueError:
            raise ConfigError(f"{key} = {self.values[key]!r} is not an integer", self._line(key))

    def get_float(self, key: str, default: float | None = None) -> float:
        if key not in self.values:
            if default is None:
                raise ConfigError(f"missing required key {key!r}")
            return default
        try:
            return float(self.values[key])
        except ValueError:
            raise ConfigError(f"{key} = {self.values[key]!r} is not a number", self._line(key))

    def get_bool(self, key: str, default: bool | None = None) -> bool:
        if key not in self.values:
            if default is None:
                raise ConfigError(f"missing required key {key!r}")
            return default
        v = self.values[key].lower()
        if v in ("true", "yes", "1", "on"):
            return True
        if v in ("false", "no", "0", "off"):
            return False
        raise ConfigError(f"{key} = {self.values[key]!r} is not a boolean", self._line(key))

    def get_ints(self, key: str, default: tuple[int, ...] | None = None) -> tuple[int, ...]:
        if key not in self.values:
            if default is None:
                raise ConfigError(f"missing required key {key!r}")
            return default
        try:
            return tuple(int(t) for t in self.values[key].split())
        except ValueError:
            raise ConfigError(f"{key} = {self.values[key]!r} is not a list of integers", self._line(key))

    def get_floats(self, key: str, default: tuple[float, ...] | None = None) -> tuple[float, ...]:
        if key not in self.values:
            if default is None:
                raise ConfigError(f"missing required key {key!r}")
            return default
        try:
            return tuple(float(t) for t in self.values[key].split())
        except ValueError:
            raise ConfigError(f"{key} = {self.values[key]!r} is not a list of numbers", self._line(key))

    def dump(self) -> str:
        """Canonical sorted rendering, used to echo the resolved config."""
        return "\n".join(f"{k} = {self.values[k]}" for k in sorted(self.values))


def parse_config(text: str) -> RunConfig:
    cfg = RunConfig()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", lineno)
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not key:
            raise ConfigError("empty key", lineno)
        if key in cfg.values:
            raise ConfigError(f"duplicate key {key!r} (first at line {cfg.lines[key]})", lineno)
        cfg.values[key] = value
        cfg.lines[key] = lineno
    schema = cfg.get_int("schema", SCHEMA_VERSION)
    if schema != SCHEMA_VERSION:
        raise ConfigError(
            f"unsupported schema version {schema} (this build reads {SCHEMA_VERSION})",
            cfg.lines.get("schema"),
        )
    return cfg


def load_config(path: str | Path) -> RunConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    return parse_config(p.read_text())
