"""Run configuration: a flat key = value file with dotted section keys.

The format is intentionally minimal so a run can be archived and replayed:
one `section.key = value` pair per line, `#` comments, and command-line
`--set key=value` overrides applied on top. All randomness in a run flows
from the mandatory `seed` key.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

DATASET_SOURCES = ("synthetic", "idx", "directory")


class ConfigError(ValueError):
    """Configuration file is malformed or inconsistent."""


def _parse_pairs(lines: Iterable[str], origin: str) -> dict[str, str]:
    pairs: dict[str, str] = {}
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{origin}:{lineno}: expected 'key = value', got {raw.rstrip()!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if not key:
            raise ConfigError(f"{origin}:{lineno}: empty key")
        pairs[key] = value.strip()
    return pairs


@dataclass(frozen=True)
class RunConfig:
    """Typed view over the flat key/value pairs of one run."""

    pairs: dict[str, str] = field(default_factory=dict)

    @classmethod
    def from_file(cls, path, overrides: Iterable[str] = ()) -> "RunConfig":
        p = Path(path)
        if not p.is_file():
            raise FileNotFoundError(f"no such config file: {p}")
        pairs = _parse_pairs(p.read_text().splitlines(), str(p))
        return cls(pairs).with_overrides(overrides)

    def with_overrides(self, overrides: Iterable[str]) -> "RunConfig":
        pairs = dict(self.pairs)
        for item in overrides:
            if "=" not in item:
                raise ConfigError(f"--set expects key=value, got {item!r}")
            key, value = item.split("=", 1)
            pairs[key.strip()] = value.strip()
        return RunConfig(pairs)

    # typed accessors ------------------------------------------------------

    def get(self, key: str, default: Optional[str] = None) -> Optional[str]:
        return self.pairs.get(key, default)

    def require(self, key: str) -> str:
        if key not in self.pairs:
            raise ConfigError(f"missing required config key {key!r}")
        return self.pairs[key]

    def get_int(self, key: str, default: Optional[int] = None) -> Optional[int]:
        raw = self.pairs.get(key)
        if raw is None:
            return default
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(f"{key} must be an integer, got {raw!r}")

    def get_float(self, key: str, default: Optional[float] = None) -> Optional[float]:
        raw = self.pairs.get(key)
        if raw is None:
            return default
        try:
            return float(raw)
        except ValueError:
            raise ConfigError(f"{key} must be a number, got {raw!r}")

    def get_bool(self, key: str, default: bool = False) -> bool:
        raw = self.pairs.get(key)
        if raw is None:
            return default
        lowered = raw.lower()
        if lowered in ("true", "yes", "1", "on"):
            return True
        if lowered in ("false", "no", "0", "off"):
            return False
        raise ConfigError(f"{key} must be a boolean, got {raw!r}")

    def get_floats(self, key: str, default: Optional[tuple] = None) -> Optional[tuple]:
        raw = self.pairs.get(key)
        if raw is None:
            return default
        try:
            return tuple(float(x) for x in raw.split(",") if x.strip())
        except ValueError:
            raise ConfigError(f"{key} must be comma-separated numbers, got {raw!r}")

    def get_strings(self, key: str, default: Optional[tuple] = None) -> Optional[tuple]:
        raw = self.pairs.get(key)
        if raw is None:
            return default
        return tuple(x.strip() for x in raw.split(",") if x.strip())

    # validation -----------------------------------------------------------

    def seed(self) -> int:
        if "seed" not in self.pairs:
            raise ConfigError("config must set a 'seed' (all randomness derives from it)")
        return self.get_int("seed")

    def dataset_source(self) -> str:
        source = self.get("dataset.source")
        if source is None:
            raise ConfigError("config must set dataset.source")
        if source not in DATASET_SOURCES:
            raise ConfigError(
                f"dataset.source must be one of {DATASET_SOURCES}, got {source!r}"
            )
        return source

    def resolved_text(self) -> str:
        """Canonical, sorted key = value dump for archiving with outputs."""
        lines = [f"{k} = {self.pairs[k]}" for k in sorted(self.pairs)]
        return "\n".join(lines) + "\n"
