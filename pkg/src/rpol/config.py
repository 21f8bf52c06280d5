"""Experiment configuration: schema, defaults, validation, persistence."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .environments import REGISTRY

VARIANTS = ("rpol-ucb", "rpol-censored-ucb", "rpol-sw-ucb", "primal-dual")


class ConfigError(ValueError):
    """Invalid or unknown configuration key/value."""


@dataclass
class ExperimentConfig:
    environment: str = "scbwc"
    T: int = 500
    variant: str = "rpol-ucb"
    scalers: str | None = None
    B_f: float = 2.0
    B_g: float = 2.0
    R_f: float | None = None
    R_g: float | None = None
    p: float = 0.05
    lengthscale: float = 1.0
    lam: float | None = None
    grid: int = 100
    m: int = 25
    W: object = 50
    P_T: float | None = None
    gamma_estimate: float | None = None
    gamma_cap: float | None = 50.0
    practical: bool = False
    variation_f: list | None = None
    variation_g: list | None = None
    reward_noise_var: float | None = None
    cost_noise_var: float | None = None
    noise_scale: str = "variance"
    delay: str | None = None
    delay_mean: float = 15.0
    delay_fixed: int = 0
    dual_step: float = 0.0
    oracle_grid: int = 1000
    seeds: list = field(default_factory=lambda: [1])
    output_dir: str | None = None

    @property
    def seed(self) -> int:
        return int(self.seeds[0])

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return dataclasses.replace(self, seeds=[int(seed)])

    def config_hash(self) -> str:
        """Hash of everything except seeds and output location."""
        d = self.to_dict()
        d.pop("seeds")
        d.pop("output_dir")
        blob = json.dumps(d, sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


KEYS = tuple(f.name for f in dataclasses.fields(ExperimentConfig))


def derived_window(gamma: float, T: int, P_T: float) -> int:
    """Window ``gamma^(1/4) * (T / P_T)^(1/2)`` rounded to the nearest integer, at least 1."""
    if not P_T > 0:
        raise ConfigError("W: 'theorem5' requires P_T > 0")
    if gamma is None or gamma < 0:
        raise ConfigError("W: 'theorem5' requires a nonnegative gamma_estimate")
    return max(1, int(round(gamma ** 0.25 * math.sqrt(T / P_T))))


def _num(name, value, kind=float):
    try:
        if kind is int:
            if isinstance(value, bool) or float(value) != int(float(value)):
                raise ValueError
            return int(float(value))
        return float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{name}: expected {kind.__name__}, got {value!r}") from None


def parse_config(source=None, **overrides) -> ExperimentConfig:
    """Build a fully resolved config from a YAML/JSON file, a dict and/or overrides.

    Unknown keys and out-of-range values raise :class:`ConfigError` naming the key.
    """
    raw: dict = {}
    if source is not None:
        if isinstance(source, dict):
            raw.update(source)
        else:
            path = Path(source)
            if not path.exists():
                raise ConfigError(f"config file not found: {path}")
            loaded = yaml.safe_load(path.read_text()) or {}
            if not isinstance(loaded, dict):
                raise ConfigError("config document must be a mapping")
            raw.update(loaded)
    raw.update({k: v for k, v in overrides.items() if v is not None})
    if "seed" in raw:
        seed = raw.pop("seed")
        raw.setdefault("seeds", [seed])
    unknown = sorted(set(raw) - set(KEYS))
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    cfg = ExperimentConfig(**raw)
    return resolve(cfg)


def resolve(cfg: ExperimentConfig) -> ExperimentConfig:
    c = dataclasses.replace(cfg)
    if c.environment not in REGISTRY:
        raise ConfigError(f"environment: unknown {c.environment!r}; registry: {', '.join(REGISTRY)}")
    c.T = _num("T", c.T, int)
    if c.T < 1:
        raise ConfigError("T must be ≥ 1")
    if c.variant not in VARIANTS:
        raise ConfigError(f"variant: unknown {c.variant!r}; expected one of {VARIANTS}")
    if c.scalers is not None and c.scalers not in ("ucb", "censored", "sw"):
        raise ConfigError(f"scalers: unknown {c.scalers!r}")
    if c.scalers is not None and c.variant != "rpol-ucb":
        raise ConfigError("scalers: only configurable for variant rpol-ucb")
    if c.noise_scale not in ("variance", "std"):
        raise ConfigError("noise_scale: expected 'variance' or 'std'")

    # noise defaults follow the environment; 0.05 is read as a variance unless told otherwise
    for key in ("reward_noise_var", "cost_noise_var"):
        v = getattr(c, key)
        v = 0.05 if v is None else _num(key, v)
        if v < 0:
            raise ConfigError(f"{key}: must be nonnegative")
        if c.noise_scale == "std":
            v = v * v
        setattr(c, key, v)
    c.noise_scale = "variance"
    if c.R_f is None:
        c.R_f = math.sqrt(c.reward_noise_var)
    if c.R_g is None:
        c.R_g = math.sqrt(c.cost_noise_var)
    for key in ("B_f", "B_g"):
        setattr(c, key, _num(key, getattr(c, key)))
        if not getattr(c, key) > 0:
            raise ConfigError(f"{key}: must be positive")
    for key in ("R_f", "R_g"):
        setattr(c, key, _num(key, getattr(c, key)))
        if getattr(c, key) < 0:
            raise ConfigError(f"{key}: must be nonnegative")
    c.p = _num("p", c.p)
    if not 0 < c.p < 1:
        raise ConfigError("p: must lie in (0, 1)")
    c.lengthscale = _num("lengthscale", c.lengthscale)
    if not c.lengthscale > 0:
        raise ConfigError("lengthscale: must be positive")
    c.lam = 1.0 + 2.0 / c.T if c.lam is None else _num("lam", c.lam)
    if not c.lam > 0:
        raise ConfigError("lam: must be positive")
    c.grid = _num("grid", c.grid, int)
    if c.grid < 2:
        raise ConfigError("grid: resolution must be >= 2")
    c.oracle_grid = _num("oracle_grid", c.oracle_grid, int)
    if c.oracle_grid < 2:
        raise ConfigError("oracle_grid: resolution must be >= 2")
    c.m = _num("m", c.m, int)
    if c.m < 1:
        raise ConfigError("m: must be >= 1")
    if c.P_T is not None:
        c.P_T = _num("P_T", c.P_T)
    if c.gamma_estimate is not None:
        c.gamma_estimate = _num("gamma_estimate", c.gamma_estimate)
    if c.W == "theorem5":
        c.W = derived_window(c.gamma_estimate, c.T, c.P_T if c.P_T is not None else 0.0)
    else:
        c.W = _num("W", c.W, int)
    if c.W < 1:
        raise ConfigError("W: must be >= 1")
    if c.gamma_cap is not None:
        c.gamma_cap = _num("gamma_cap", c.gamma_cap)
        if c.gamma_cap < 0:
            raise ConfigError("gamma_cap: must be nonnegative")
    c.practical = bool(c.practical)
    if c.delay is not None and c.delay not in ("none", "poisson", "fixed"):
        raise ConfigError(f"delay: unknown {c.delay!r}")
    if c.delay is None:
        c.delay = "poisson" if c.environment == "scbwc-delayed" else "none"
    c.delay_mean = _num("delay_mean", c.delay_mean)
    if c.delay == "poisson" and not c.delay_mean > 0:
        raise ConfigError("delay_mean: must be positive")
    c.delay_fixed = _num("delay_fixed", c.delay_fixed, int)
    if c.delay_fixed < 0:
        raise ConfigError("delay_fixed: must be nonnegative")
    c.dual_step = _num("dual_step", c.dual_step)
    if c.dual_step < 0:
        raise ConfigError("dual_step: must be nonnegative")
    for key in ("variation_f", "variation_g"):
        v = getattr(c, key)
        if v is not None:
            v = [_num(key, e) for e in v]
            if any(e < 0 for e in v):
                raise ConfigError(f"{key}: norms must be nonnegative")
            setattr(c, key, v)
    if not isinstance(c.seeds, (list, tuple)) or not c.seeds:
        raise ConfigError("seeds: expected a non-empty list")
    c.seeds = [_num("seeds", s, int) for s in c.seeds]
    return c


def save_config(cfg: ExperimentConfig, path) -> None:
    Path(path).write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=True))


def load_config(path) -> ExperimentConfig:
    return parse_config(path)
