"""Experiment configuration: dataclass defaults plus the key = value file format.

Config files hold one ``key = value`` assignment per line with ``#``
comments; keys must exactly match ExperimentConfig field names. Unknown
keys are rejected so typos fail loudly.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path

from .training import StageSchedule


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    # data distribution
    num_classes: int = 4
    dim: int = 64
    num_tokens: int = 10
    noise_std: float = 0.05
    samples_per_type: int = 4
    # models
    num_experts: int = 12
    init_std: float = 0.1
    num_heads: int | None = None  # multi-head baseline; defaults to num_experts
    # schedule
    t1: int = 300
    t2: int = 800
    t_total: int = 1200
    eta: float = 0.05
    eta_a: float = 0.5
    eta_r: float = 0.5
    noise_stage1: float = 1.0
    noise_stage2: float = 1.0
    noise_stage3: float = 0.0
    # run control
    seeds: list[int] = field(default_factory=lambda: [0])
    out_dir: str = "runs"

    def __post_init__(self):
        if self.num_heads is None:
            self.num_heads = self.num_experts
        if not self.seeds:
            raise ConfigError("seeds must be nonempty")
        if self.dim < 2 * self.num_classes:
            raise ConfigError(f"dim={self.dim} must be at least 2*num_classes={2 * self.num_classes}")
        if self.num_tokens < 3:
            raise ConfigError("num_tokens must be >= 3")
        if self.samples_per_type < 1:
            raise ConfigError("samples_per_type must be >= 1")
        if self.num_classes < 2:
            raise ConfigError("num_classes must be >= 2")

    @property
    def corpus_size(self) -> int:
        return self.samples_per_type * 4 * self.num_classes * (self.num_classes - 1)

    def schedule(self) -> StageSchedule:
        return StageSchedule(
            t1=self.t1,
            t2=self.t2,
            t_total=self.t_total,
            eta=self.eta,
            eta_a=self.eta_a,
            eta_r=self.eta_r,
            noise_scale_by_stage=(self.noise_stage1, self.noise_stage2, self.noise_stage3),
        )

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


_FIELD_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}


def _parse_value(key: str, raw: str):
    raw = raw.strip()
    if key == "seeds":
        try:
            return [int(tok) for tok in raw.split(",") if tok.strip() != ""]
        except ValueError:
            raise ConfigError(f"config key 'seeds' expects comma-separated integers, got {raw!r}")
    if key == "out_dir":
        return raw
    if key in ("num_classes", "dim", "num_tokens", "samples_per_type", "num_experts",
               "num_heads", "t1", "t2", "t_total"):
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(f"config key {key!r} expects an integer, got {raw!r}")
    try:
        return float(raw)
    except ValueError:
        raise ConfigError(f"config key {key!r} expects a number, got {raw!r}")


def parse_config_text(text: str) -> ExperimentConfig:
    values: dict = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = stripped.split("=", 1)
        key = key.strip()
        if key not in _FIELD_TYPES:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        values[key] = _parse_value(key, raw)
    return ExperimentConfig(**values)


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    return parse_config_text(path.read_text())


def format_config(config: ExperimentConfig) -> str:
    """Render a config back to the file grammar (round-trips via parse)."""
    lines = []
    for f in fields(ExperimentConfig):
        value = getattr(config, f.name)
        if f.name == "seeds":
            value = ",".join(str(s) for s in value)
        lines.append(f"{f.name} = {value}")
    return "\n".join(lines) + "\n"
