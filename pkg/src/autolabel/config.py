"""Run configuration: flat key=value files with command-line overrides.

A run is reproducible from one serialized config; every stage copies
the resolved, result-affecting keys into the output root. All
randomness flows from the single seed through named sub-seeds, so the
split, center initialization and palette can be audited independently.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, fields
from pathlib import Path


class ConfigError(Exception):
    pass


@dataclass
class PipelineConfig:
    k: int
    manifest: str = ""
    out: str = ""
    sigma: float = 0.3
    batch_size: int = 4096
    epochs: int = 2
    seed: int = 0
    workers: int = 1
    gt_root: str = ""
    palette_seed: int | None = None
    normalize: bool = False

    def validate(self) -> None:
        if not 1 <= self.k <= 255:
            raise ConfigError(f"k must be in [1, 255] (255 is the ignore value), got {self.k}")
        if not 0.0 <= self.sigma <= 1.0:
            raise ConfigError(f"sigma must be in [0, 1], got {self.sigma}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.workers < 1:
            raise ConfigError(f"workers must be >= 1, got {self.workers}")
        if not self.manifest:
            raise ConfigError("manifest path is required")
        if not self.out:
            raise ConfigError("output root is required")

    def resolved_palette_seed(self) -> int:
        if self.palette_seed is not None:
            return self.palette_seed
        return derive_seed(self.seed, "palette")

    def snapshot(self) -> str:
        """Serialized result-affecting keys, in fixed order.

        Execution-only settings (workers, out) are deliberately
        excluded: they must never change what gets produced.
        """
        lines = [
            f"sigma={self.sigma!r}",
            f"k={self.k}",
            f"batch_size={self.batch_size}",
            f"epochs={self.epochs}",
            f"seed={self.seed}",
            f"palette_seed={self.resolved_palette_seed()}",
            f"normalize={int(self.normalize)}",
            f"manifest={self.manifest}",
            f"gt_root={self.gt_root}",
        ]
        return "\n".join(lines) + "\n"


_BOOL_TRUE = {"1", "true", "yes", "on"}
_BOOL_FALSE = {"0", "false", "no", "off"}


def parse_config_file(path: str | Path) -> dict[str, str]:
    """Read key=value lines; '#' starts a comment, blank lines ignored."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    values: dict[str, str] = {}
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{ln}: expected key=value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        values[key] = value
    return values


def resolve_config(
    file_values: dict[str, str] | None, overrides: dict[str, object]
) -> PipelineConfig:
    """Merge defaults <- config file <- explicit overrides (flags win)."""
    known = {f.name: f.type for f in fields(PipelineConfig)}
    merged: dict[str, object] = {}
    for key, raw in (file_values or {}).items():
        if key not in known:
            raise ConfigError(f"unknown config key {key!r}")
        merged[key] = _coerce(key, raw)
    for key, value in overrides.items():
        if value is None:
            continue
        if key not in known:
            raise ConfigError(f"unknown config key {key!r}")
        merged[key] = value
    if "k" not in merged:
        raise ConfigError("k is required (config file key 'k' or --k)")
    cfg = PipelineConfig(**merged)  # type: ignore[arg-type]
    cfg.validate()
    return cfg


def _coerce(key: str, raw: str):
    if key in ("k", "batch_size", "epochs", "seed", "workers", "palette_seed"):
        try:
            return int(raw)
        except ValueError as exc:
            raise ConfigError(f"{key} must be an integer, got {raw!r}") from exc
    if key == "sigma":
        try:
            return float(raw)
        except ValueError as exc:
            raise ConfigError(f"sigma must be a number, got {raw!r}") from exc
    if key == "normalize":
        low = raw.lower()
        if low in _BOOL_TRUE:
            return True
        if low in _BOOL_FALSE:
            return False
        raise ConfigError(f"normalize must be boolean, got {raw!r}")
    return raw


def derive_seed(seed: int, name: str) -> int:
    """Stable named sub-seed: low 8 bytes of sha256('<seed>:<name>')."""
    digest = hashlib.sha256(f"{seed}:{name}".encode()).digest()
    return int.from_bytes(digest[:8], "little")
