"""Plain-text run configuration: `key = value` lines, '#' comments.

Unknown keys are rejected and every problem in the file is reported in one
pass. See README for the key reference.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

from nsexit.arch import VARIANTS


class ConfigError(ValueError):
    def __init__(self, problems: list[str]):
        self.problems = list(problems)
        super().__init__("invalid configuration:\n  " + "\n  ".join(self.problems))


def _parse_bool(s: str) -> bool:
    if s.lower() in ("1", "true", "yes", "on"):
        return True
    if s.lower() in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


@dataclass
class RunConfig:
    variant: str = "baseline"
    strategy: str = "joint"            # joint | layerwise
    profile: str = "full"              # full | tiny
    lr: float = 1e-4
    batch_size: int = 512
    max_epochs: int = 400
    patience: int = 25
    lr_decay: float = 0.9
    decay_interval: int = 5
    seed: int = 0
    clip_seconds: float = 4.0
    loss_alpha: float = 0.3
    loss_compression: float = 0.3
    exit_activation: str = "preact"    # preact | postact
    data_manifest: str = ""
    baseline_checkpoint: str = ""
    out_dir: str = "runs"


_TYPES = {f.name: f.type for f in fields(RunConfig)}
_CASTS = {"str": str, "float": float, "int": int, "bool": _parse_bool}


def load_config(path) -> RunConfig:
    """Parse and validate a config file, reporting all problems at once."""
    problems: list[str] = []
    values: dict = {}
    for ln, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            problems.append(f"line {ln}: expected 'key = value', got {raw!r}")
            continue
        key, _, val = (s.strip() for s in line.partition("="))
        if key not in _TYPES:
            problems.append(f"line {ln}: unknown key {key!r}")
            continue
        if key in values:
            problems.append(f"line {ln}: duplicate key {key!r}")
            continue
        try:
            values[key] = _CASTS[_TYPES[key]](val)
        except ValueError as exc:
            problems.append(f"line {ln}: bad value for {key}: {exc}")
    cfg = RunConfig(**values) if not problems else None
    problems.extend(validate(cfg) if cfg else [])
    if problems:
        raise ConfigError(problems)
    return cfg


def validate(cfg: RunConfig) -> list[str]:
    problems = []
    if cfg.variant not in VARIANTS:
        problems.append(f"variant must be one of {sorted(VARIANTS)}, got {cfg.variant!r}")
    if cfg.strategy not in ("joint", "layerwise"):
        problems.append(f"strategy must be joint or layerwise, got {cfg.strategy!r}")
    if cfg.profile not in ("full", "tiny"):
        problems.append(f"profile must be full or tiny, got {cfg.profile!r}")
    if cfg.exit_activation not in ("preact", "postact"):
        problems.append(f"exit_activation must be preact or postact, "
                        f"got {cfg.exit_activation!r}")
    for key in ("lr", "batch_size", "max_epochs", "patience", "lr_decay",
                "decay_interval", "clip_seconds"):
        if getattr(cfg, key) <= 0:
            problems.append(f"{key} must be positive")
    if not 0.0 <= cfg.loss_alpha <= 1.0:
        problems.append("loss_alpha must be in [0, 1]")
    if not 0.0 < cfg.loss_compression <= 1.0:
        problems.append("loss_compression must be in (0, 1]")
    if cfg.patience <= cfg.decay_interval:
        problems.append("patience must exceed decay_interval")
    if cfg.variant.startswith("pretrain") and not cfg.baseline_checkpoint:
        problems.append("baseline_checkpoint is required for pretrain variants")
    return problems
