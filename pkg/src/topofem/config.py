"""Run configuration with a flat ``key = value`` text form."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from .errors import ConfigError
from .levelset import scenario_names

METHODS = ("bdf1", "bdf2")


@dataclass
class RunConfig:
    scenario: str = "paper_splitting"
    method: str = "bdf1"
    order: int = 1
    Lx: int = 1
    Lt: int = -1  # -1: 2*Lx for bdf1, Lx for bdf2
    c_gamma: float = 1.0
    quad_depth: int = -1  # -1: 2 for order 1, 3 for order 2
    solver_tol: float = 1e-11
    T: float = 0.5
    h0: float = 0.5
    dt0: float = 0.1
    x_lo: float = -2.0
    x_hi: float = 2.0
    y_lo: float = -1.5
    y_hi: float = 1.5
    delta_safety: float = 2.0
    exclusion_radius: float = 0.1
    output_dir: str = "."
    ledger_csv: str = ""
    snapshot_every: int = 0

    def __post_init__(self):
        self.validate()

    # derived quantities
    @property
    def time_level(self):
        if self.Lt >= 0:
            return self.Lt
        return 2 * self.Lx if self.method == "bdf1" else self.Lx

    @property
    def depth(self):
        return self.quad_depth if self.quad_depth >= 0 else (2 if self.order == 1 else 3)

    @property
    def dt(self):
        return self.dt0 * 2.0 ** (-self.time_level)

    @property
    def n_steps(self):
        return int(round(self.T / self.dt))

    @property
    def rect(self):
        return ((self.x_lo, self.x_hi), (self.y_lo, self.y_hi))

    def validate(self):
        if self.scenario not in scenario_names():
            raise ConfigError(f"unknown scenario {self.scenario!r}; choose from {', '.join(scenario_names())}")
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.order not in (1, 2):
            raise ConfigError(f"order must be 1 or 2, got {self.order}")
        if self.Lx < 0 or self.Lt < -1:
            raise ConfigError("refinement levels must be non-negative")
        if not self.c_gamma > 0:
            raise ConfigError("c_gamma must be positive")
        if self.quad_depth < -1:
            raise ConfigError("quad_depth must be non-negative")
        if not 0 < self.solver_tol < 1:
            raise ConfigError("solver_tol must lie in (0, 1)")
        if self.T < 0 or not self.dt0 > 0 or not self.h0 > 0:
            raise ConfigError("T must be non-negative, dt0 and h0 positive")
        if self.delta_safety < 1:
            raise ConfigError("delta_safety must be at least 1")
        if self.snapshot_every < 0:
            raise ConfigError("snapshot_every must be non-negative")
        if abs(self.T / self.dt - round(self.T / self.dt)) > 1e-9 * max(1.0, self.T / self.dt):
            raise ConfigError(f"T={self.T} is not a multiple of dt={self.dt}")

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def to_text(self):
        return "".join(f"{f.name} = {getattr(self, f.name)!r}\n" if f.type == "str" else
                       f"{f.name} = {getattr(self, f.name)}\n" for f in fields(self))

    @classmethod
    def from_text(cls, text, **overrides):
        values = {}
        types = {f.name: f.type for f in fields(cls)}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected key = value")
            key, value = (s.strip() for s in line.split("=", 1))
            if key not in types:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
            values[key] = value
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**{k: _coerce(types[k], k, v) for k, v in values.items()})

    @classmethod
    def from_file(cls, path, **overrides):
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_text(text, **overrides)


def _coerce(kind, key, value):
    if not isinstance(value, str):
        return value
    try:
        if kind == "int":
            return int(value)
        if kind == "float":
            return float(value)
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {value!r} as {kind}") from exc
    if len(value) >= 2 and value[0] == value[-1] and value[0] in "'\"":
        return value[1:-1]
    return value
