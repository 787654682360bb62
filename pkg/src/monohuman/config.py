"""Run configuration and its key-value text file format.

One ``key = value`` pair per line; ``#`` starts a comment. Unknown keys and
values that do not parse as the field's type are rejected. Tuples are
written comma-separated.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from .optim import DEFAULT_LR


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    # rendering
    resolution: int = 64
    views: int = 8
    radius: float = 1.5
    fov: float = 70.0
    elevation_range: float = 30.0
    # network
    width: int = 32
    n_down: int = 3
    init_seed: int = 0
    # optimisation
    lr: float = DEFAULT_LR
    weight_decay: float = 0.01
    steps_supervisor: int = 2000
    steps_ugl: int = 2000
    steps_cgt: int = 2000
    steps_anim: int = 2000
    # regularisation
    alpha: float = 0.01
    sfr_taps: tuple = ("mid", "up1", "up2", "up3")
    # data
    seed: int = 0
    n_train_ids: int = 24
    poses_per_id: int = 4
    n_test_ids: int = 6
    pose_scale: float = 0.5
    # priors
    prior_blur: float = 1.0
    prior_noise: float = 0.05
    prior_shift: int = 2
    # augmentation and cascading
    aug_mode: str = "none"
    aug_ratio: float = 0.5
    cascade: str = "cascaded"
    # evaluation
    eval_samples: int = 4000
    tau_cm: float = 5.0
    eval_min_opacity: float = 0.5
    out: str = "runs"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.views < 1:
            raise ConfigError("views must be >= 1")
        if self.resolution <= 0 or self.resolution % (2 ** self.n_down):
            raise ConfigError(f"resolution must be a positive multiple of {2 ** self.n_down}")
        if not 0 < self.fov < 180 or self.radius <= 0:
            raise ConfigError("invalid camera settings")
        if self.alpha < 0:
            raise ConfigError("alpha must be non-negative")
        if not 0.0 <= self.aug_ratio <= 1.0:
            raise ConfigError("aug_ratio must lie in [0, 1]")
        if self.aug_mode not in ("none", "lbs", "oaa"):
            raise ConfigError(f"aug_mode must be none, lbs or oaa, got '{self.aug_mode}'")
        if self.cascade not in ("cascaded", "separate"):
            raise ConfigError(f"cascade must be cascaded or separate, got '{self.cascade}'")
        if not 0.0 <= self.eval_min_opacity < 1.0:
            raise ConfigError("eval_min_opacity must lie in [0, 1)")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")

    def with_(self, **kw) -> "RunConfig":
        return replace(self, **kw)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["sfr_taps"] = list(self.sfr_taps)
        return d

    def hash(self, exclude=("out",)) -> str:
        d = {k: v for k, v in self.to_dict().items() if k not in exclude}
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:12]

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            lines.append(f"{f.name} = {','.join(v) if isinstance(v, tuple) else v}")
        return "\n".join(lines) + "\n"


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _parse_value(key: str, text: str):
    kind = _FIELD_TYPES[key]
    try:
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
        if kind == "tuple":
            return tuple(s.strip() for s in text.split(",") if s.strip())
        return text
    except ValueError:
        raise ConfigError(f"{key}: cannot parse '{text}' as {kind}") from None


def parse_config_text(text: str, base: RunConfig | None = None) -> RunConfig:
    vals = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in _FIELD_TYPES:
            raise ConfigError(f"line {lineno}: unknown key '{key}'")
        vals[key] = _parse_value(key, val)
    return replace(base or RunConfig(), **vals)


def load_config(path) -> RunConfig:
    return parse_config_text(Path(path).read_text())


def save_config(cfg: RunConfig, path) -> None:
    Path(path).write_text(cfg.to_text())
