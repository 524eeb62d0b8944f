"""Training/run configuration and the ``key = value`` config-file format."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path

from .errors import ConfigError


@dataclass
class TrainConfig:
    """Amplifier training schedule; defaults follow the published protocol."""

    epochs: int = 600
    lr: float = 0.1
    snapshot_start: int = 200      # snapshots are taken after this epoch...
    snapshot_every: int = 2        # ...every this many epochs
    n_snapshots: int = 200
    test_fraction: float = 0.2     # observed pixels held out for the test L1
    orthogonal_head: bool = True
    head_lr_scale: float = 0.01    # conv head steps at lr * head_lr_scale
    tile: int = 64
    coverage: float = 0.95
    seed: int = 0

    def snapshot_epochs(self) -> list[int]:
        first = self.snapshot_start + 1
        return list(range(first, first + self.snapshot_every * self.n_snapshots, self.snapshot_every))

    def validate(self) -> "TrainConfig":
        if self.epochs < 1 or self.lr <= 0:
            raise ConfigError("epochs must be >= 1 and lr > 0")
        if self.snapshot_every < 1 or self.n_snapshots < 1 or self.snapshot_start < 0:
            raise ConfigError("snapshot schedule must have start >= 0, every >= 1, count >= 1")
        last = self.snapshot_epochs()[-1]
        if self.epochs < last:
            raise ConfigError(
                f"snapshot window unreachable: {self.n_snapshots} snapshots every {self.snapshot_every} "
                f"epochs after epoch {self.snapshot_start} need {last} epochs, got {self.epochs}")
        if not 0.0 <= self.test_fraction < 1.0:
            raise ConfigError("test_fraction must be in [0, 1)")
        if not self.head_lr_scale > 0:
            raise ConfigError("head_lr_scale must be positive")
        if not 0.0 < self.coverage < 1.0:
            raise ConfigError("coverage must be in (0, 1)")
        if self.tile < 4:
            raise ConfigError("tile must be at least 4 pixels")
        return self


@dataclass
class AirConfig:
    """Air-temperature network training; defaults follow the published protocol."""

    epochs: int = 500
    lr: float = 0.01
    batch_size: int = 65536
    test_fraction: float = 0.2     # fraction of stations held out
    seed: int = 0

    def validate(self) -> "AirConfig":
        if self.epochs < 1 or self.lr <= 0 or self.batch_size < 1:
            raise ConfigError("epochs, lr and batch_size must be positive")
        if not 0.0 <= self.test_fraction < 1.0:
            raise ConfigError("test_fraction must be in [0, 1)")
        return self


@dataclass
class RunConfig:
    amplifier: TrainConfig = field(default_factory=TrainConfig)
    air: AirConfig = field(default_factory=AirConfig)
    threads: int = 0               # 0 -> one worker per CPU (capped by AIRTEMP_THREADS)
    extra: dict[str, str] = field(default_factory=dict)

    def validate(self) -> "RunConfig":
        self.amplifier.validate()
        self.air.validate()
        if self.threads < 0:
            raise ConfigError("threads must be >= 0")
        return self


def parse_kv(text: str) -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment, blank lines are skipped."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def format_kv(items: dict[str, object]) -> str:
    return "".join(f"{k} = {v}\n" for k, v in items.items())


def read_kv(path: str | Path) -> dict[str, str]:
    return parse_kv(Path(path).read_text(encoding="utf-8"))


def _coerce(value: str, typ):
    if typ in (bool, "bool"):
        low = value.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"not a boolean: {value!r}")
    if typ in (int, "int"):
        return int(value)
    if typ in (float, "float"):
        return float(value)
    return value


def apply_kv(obj, items: dict[str, str], prefix: str = ""):
    """Return a copy of dataclass ``obj`` with ``prefix + field`` keys applied."""
    changes = {}
    for f in fields(obj):
        key = prefix + f.name
        if key in items:
            try:
                changes[f.name] = _coerce(items[key], f.type)
            except ValueError as exc:
                raise ConfigError(f"{key}: {exc}") from None
    return dataclasses.replace(obj, **changes)


def _int_item(items: dict[str, str], key: str, default: int) -> int:
    try:
        return int(items.get(key, default))
    except ValueError:
        raise ConfigError(f"{key}: not an integer: {items[key]!r}") from None


def load_run_config(path: str | Path | None) -> RunConfig:
    items = read_kv(path) if path else {}
    known = {f"amplifier.{f.name}" for f in fields(TrainConfig)} | {f"air.{f.name}" for f in fields(AirConfig)}
    known.add("threads")
    cfg = RunConfig(
        amplifier=apply_kv(TrainConfig(), items, "amplifier."),
        air=apply_kv(AirConfig(), items, "air."),
        threads=_int_item(items, "threads", 0),
        extra={k: v for k, v in items.items() if k not in known},
    )
    return cfg
