"""Pipeline parameters, YAML config files and environment overrides."""
from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field

import yaml

from .errors import ValidationError

ENV_PREFIX = "AUTOMOS_"


@dataclass
class PipelineConfig:
    # dynamic proposals
    voi_radius: float = 80.0
    n_rings: int = 20
    n_sectors: int = 60
    ratio_threshold: float = 0.2
    h_min: float = 0.2
    d_ground: float = 0.15
    ground_reversion: bool = True
    map_voxel: float = 0.1
    min_votes: int = 1
    min_vote_ratio: float = 0.2
    # instances
    eps_ladder: list = field(default_factory=lambda: [2.0, 1.0, 0.5, 0.25])
    min_pts: int = 5
    n_min: int = 5
    t_size: float = 20.0
    # tracking
    alpha_d: float = 1.0
    alpha_o: float = 1.0
    alpha_v: float = 1.0
    t_d: float = 2.0
    t_o: float = 0.95
    t_v: float = 0.7
    n_old: int = 5
    dt: float = 0.1
    q_pos: float = 0.01
    q_vel: float = 0.25
    q_shape: float = 0.01
    r_pos: float = 0.04
    r_shape: float = 0.04
    r_yaw: float = 0.01
    init_vel_var: float = 4.0
    # labels
    trajectory_mode: str = "path"
    # output
    clean_map_voxel: float = 0.1

    def validate(self) -> "PipelineConfig":
        positive = ["voi_radius", "ratio_threshold", "d_ground", "t_size", "dt", "t_d",
                    "r_pos", "r_shape", "r_yaw", "init_vel_var", "clean_map_voxel"]
        for name in positive:
            if not getattr(self, name) > 0:
                raise ValidationError(f"{name} must be positive, got {getattr(self, name)!r}")
        for name in ["n_rings", "n_sectors", "min_pts", "n_min", "min_votes"]:
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be >= 1")
        for name in ["alpha_d", "alpha_o", "alpha_v", "q_pos", "q_vel", "q_shape", "h_min",
                     "map_voxel", "n_old", "t_o", "t_v", "min_vote_ratio"]:
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be nonnegative")
        if not self.eps_ladder:
            raise ValidationError("eps_ladder must not be empty")
        if any(e <= 0 for e in self.eps_ladder):
            raise ValidationError("eps_ladder values must be positive")
        if any(a <= b for a, b in zip(self.eps_ladder, self.eps_ladder[1:])):
            raise ValidationError("eps_ladder must be strictly descending")
        if self.trajectory_mode not in ("path", "displacement"):
            raise ValidationError(f"trajectory_mode must be 'path' or 'displacement'")
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        fields = {f.name: f for f in dataclasses.fields(cls)}
        unknown = set(d) - set(fields)
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        kw = {}
        for k, v in d.items():
            kw[k] = _coerce(k, v, getattr(cls(), k))
        return cls(**kw).validate()

    def dumps(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    @classmethod
    def loads(cls, text: str) -> "PipelineConfig":
        d = yaml.safe_load(text) or {}
        if not isinstance(d, dict):
            raise ValidationError("config must be a key-value mapping")
        return cls.from_dict(d)

    def with_env(self, environ=None) -> "PipelineConfig":
        """Apply ``AUTOMOS_<KEY>=value`` overrides (values parsed as YAML scalars)."""
        environ = os.environ if environ is None else environ
        d = self.to_dict()
        for key, raw in environ.items():
            if not key.startswith(ENV_PREFIX):
                continue
            name = key[len(ENV_PREFIX):].lower()
            if name not in d:
                raise ValidationError(f"unknown config key in environment: {key}")
            d[name] = yaml.safe_load(raw)
        return PipelineConfig.from_dict(d)


def _coerce(name, value, default):
    try:
        if isinstance(default, bool):
            if not isinstance(value, bool):
                raise TypeError
            return value
        if isinstance(default, int):
            if isinstance(value, bool) or float(value) != int(value):
                raise TypeError
            return int(value)
        if isinstance(default, float):
            if isinstance(value, bool):
                raise TypeError
            return float(value)
        if isinstance(default, list):
            return [float(v) for v in value]
        if isinstance(default, str):
            return str(value)
    except (TypeError, ValueError):
        raise ValidationError(f"config key {name!r}: bad value {value!r}") from None
    return value


def load_config(path=None, environ=None) -> PipelineConfig:
    cfg = PipelineConfig()
    if path is not None:
        with open(path) as f:
            cfg = PipelineConfig.loads(f.read())
    return cfg.with_env(environ)
