"""Flat ``key=value`` run configuration.

One setting per line, ``#`` starts a comment, blank lines are ignored.
Only the keys of ``RunConfig`` are accepted.
"""

from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from .objectives import LossCoefficients
from .trainer import TrainConfig

DATASETS = ("glyph", "glyph-single", "factor-grid")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    dataset: str = "glyph"
    n_pairs: int = 6000
    batch_size: int = 64
    lr: float = 1e-4
    steps_shared: int = 3000
    steps_exclusive: int = 3000
    shared_dim: int = 64
    exclusive_dim: int = 8
    alpha_sh: float = 0.5
    beta_sh: float = 1.0
    gamma: float = 0.1
    alpha_ex: float = 0.5
    beta_ex: float = 1.0
    lambda_adv: float = 0.025
    seed: int = 0
    weight_sharing: bool = False
    non_ssr: bool = False
    out_dir: str = "runs"

    def __post_init__(self):
        if self.dataset not in DATASETS:
            raise ConfigError(f"dataset: expected one of {', '.join(DATASETS)}, got {self.dataset!r}")
        for name in ("n_pairs", "batch_size", "shared_dim", "exclusive_dim"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name}: must be >= 1")
        for name in ("steps_shared", "steps_exclusive"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name}: must be >= 0")
        if self.lr <= 0:
            raise ConfigError("lr: must be positive")
        for name in ("alpha_sh", "beta_sh", "gamma", "alpha_ex", "beta_ex", "lambda_adv"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name}: must be non-negative")

    @property
    def coefficients(self) -> LossCoefficients:
        return LossCoefficients(self.alpha_sh, self.beta_sh, self.gamma, self.alpha_ex, self.beta_ex, self.lambda_adv)

    def train_config(self, **extra) -> TrainConfig:
        return TrainConfig(dataset=self.dataset, n_pairs=self.n_pairs, batch_size=self.batch_size, lr=self.lr,
                           steps_shared=self.steps_shared, steps_exclusive=self.steps_exclusive,
                           shared_dim=self.shared_dim, exclusive_dim=self.exclusive_dim,
                           coeffs=self.coefficients, seed=self.seed, weight_sharing=self.weight_sharing,
                           non_ssr=self.non_ssr, **extra)

    def to_text(self) -> str:
        return "".join(f"{k}={_format(v)}\n" for k, v in asdict(self).items())

    def digest(self) -> str:
        """Hash of every setting that affects artifacts (``out_dir`` excluded)."""
        text = "".join(f"{k}={_format(v)}\n" for k, v in asdict(self).items() if k != "out_dir")
        return hashlib.sha256(text.encode()).hexdigest()


KEYS = tuple(f.name for f in fields(RunConfig))
_TYPES = {f.name: type(f.default) for f in fields(RunConfig)}


def _format(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    return repr(v) if isinstance(v, float) else str(v)


def parse_value(key: str, raw: str):
    if key not in _TYPES:
        raise ConfigError(f"unknown config key {key!r}; valid keys: {', '.join(KEYS)}")
    kind = _TYPES[key]
    raw = raw.strip()
    try:
        if kind is bool:
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        return kind(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {kind.__name__}") from None


def parse_config(text: str, base: RunConfig | None = None) -> RunConfig:
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        values[key] = parse_value(key, raw)
    return apply_overrides(base or RunConfig(), values)


def load_config(path) -> RunConfig:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    return parse_config(p.read_text(encoding="utf-8"))


def apply_overrides(cfg: RunConfig, values: dict) -> RunConfig:
    unknown = [k for k in values if k not in _TYPES]
    if unknown:
        raise ConfigError(f"unknown config key {unknown[0]!r}; valid keys: {', '.join(KEYS)}")
    return replace(cfg, **values)
