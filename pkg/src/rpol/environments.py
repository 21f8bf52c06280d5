"""Synthetic constrained black-box environments with noise and delays."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources
from typing import Callable

import numpy as np

from .optimize import BoxDomain

STREAMS = {
    "reward-noise": 0,
    "cost-noise": 1,
    "reward-delay": 2,
    "cost-delay": 3,
    "policy-tiebreak": 4,
}


class RngStreams:
    """Named counter-based (Philox) substreams derived from one seed.

    Each stream is keyed by ``(seed, stream id)``; drawing from one never
    shifts another.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._gens = {}

    def __getitem__(self, name: str) -> np.random.Generator:
        if name not in self._gens:
            if name not in STREAMS:
                raise KeyError(f"unknown stream {name!r}; known: {sorted(STREAMS)}")
            ss = np.random.SeedSequence([self.seed, STREAMS[name]])
            self._gens[name] = np.random.Generator(np.random.Philox(ss))
        return self._gens[name]


@dataclass(frozen=True)
class Segment:
    start_round: int
    f: Callable
    g: Callable
    variation_f_norm: float = 0.0
    variation_g_norm: float = 0.0


@dataclass(frozen=True)
class FunctionSchedule:
    """Piecewise-constant sequence of (f, g) pairs.

    ``variation_*_norm`` of a segment is the RKHS norm of the change from the
    previous segment, i.e. of ``f_s - f_{s+1}`` at ``s = start_round - 1``.
    """

    segments: tuple

    def __post_init__(self):
        starts = [s.start_round for s in self.segments]
        if not starts or starts[0] != 1:
            raise ValueError("first segment must start at round 1")
        if any(b <= a for a, b in zip(starts, starts[1:])):
            raise ValueError("segment start rounds must be strictly increasing")

    def segment_index(self, t: int) -> int:
        if t < 1:
            raise ValueError(f"round must be >= 1, got {t}")
        idx = 0
        for i, seg in enumerate(self.segments):
            if seg.start_round <= t:
                idx = i
        return idx

    def at(self, t: int) -> Segment:
        return self.segments[self.segment_index(t)]

    def variation(self, s: int) -> tuple:
        """``(|f_s - f_{s+1}|, |g_s - g_{s+1}|)``; zero unless a change follows ``s``."""
        for seg in self.segments[1:]:
            if seg.start_round == s + 1:
                return seg.variation_f_norm, seg.variation_g_norm
        return 0.0, 0.0

    @property
    def stationary(self) -> bool:
        return len(self.segments) == 1


@dataclass(frozen=True)
class NoiseSpec:
    reward_noise_var: float = 0.05
    cost_noise_var: float = 0.05

    def __post_init__(self):
        if self.reward_noise_var < 0 or self.cost_noise_var < 0:
            raise ValueError("noise variances must be nonnegative")


@dataclass(frozen=True)
class DelaySpec:
    kind: str = "none"          # none | poisson | fixed
    mean: float = 0.0
    d: int = 0

    def __post_init__(self):
        if self.kind not in ("none", "poisson", "fixed"):
            raise ValueError(f"unknown delay kind {self.kind!r}")
        if self.kind == "poisson" and not self.mean > 0:
            raise ValueError("Poisson delay mean must be positive")
        if self.kind == "fixed" and self.d < 0:
            raise ValueError("fixed delay must be nonnegative")

    def sample(self, rng: np.random.Generator) -> int:
        if self.kind == "poisson":
            return int(rng.poisson(self.mean))
        if self.kind == "fixed":
            return int(self.d)
        return 0


@dataclass(frozen=True)
class FeedbackEvent:
    issued_round: int
    point: tuple
    reward_obs: float
    cost_obs: float
    reward_delay: int = 0
    cost_delay: int = 0

    def __post_init__(self):
        if self.reward_delay < 0 or self.cost_delay < 0:
            raise ValueError("delays must be nonnegative")


# ----------------------------------------------------------------------
# closed-form functions of the three synthetic setups
# ----------------------------------------------------------------------
def _cols(X):
    X = np.atleast_2d(np.asarray(X, dtype=float))
    return X[:, 0], X[:, 1]


def f_base(X):
    x1, x2 = _cols(X)
    return -np.sin(x1) - x2


def g_base(X):
    x1, x2 = _cols(X)
    return np.sin(x1) * np.sin(x2) + 0.95


def f_mid(X):
    x1, x2 = _cols(X)
    return -np.sin(x1 - 5.0) - x2


def g_mid(X):
    x1, x2 = _cols(X)
    return np.sin(x1) * np.sin(x2 + 5.0) + 0.5


def f_late(X):
    x1, x2 = _cols(X)
    return -np.sin(x1 + 4.0) - x2


def g_late(X):
    x1, x2 = _cols(X)
    return np.sin(x1 + 5.0) * np.sin(x2) + 0.95


SQUARE_0_6 = BoxDomain((0.0, 0.0), (6.0, 6.0))
REGISTRY = ("scbwc", "scbwc-delayed", "scbwc-nonstationary")


def load_variation_norms() -> dict:
    """Offline RKHS-norm estimates for the changes of the non-stationary setup."""
    text = resources.files("rpol").joinpath("data/variation_norms.json").read_text()
    return json.loads(text)


def builtin(name: str, variation_norms: dict | None = None):
    """Return ``(schedule, domain, noise, delay)`` for a registered setup."""
    noise = NoiseSpec(0.05, 0.05)
    if name == "scbwc":
        return FunctionSchedule((Segment(1, f_base, g_base),)), SQUARE_0_6, noise, DelaySpec()
    if name == "scbwc-delayed":
        return (FunctionSchedule((Segment(1, f_base, g_base),)), SQUARE_0_6, noise,
                DelaySpec("poisson", mean=15.0))
    if name == "scbwc-nonstationary":
        norms = variation_norms if variation_norms is not None else load_variation_norms()
        ch1, ch2 = norms["changes"]
        schedule = FunctionSchedule((
            Segment(1, f_base, g_base),
            Segment(101, f_mid, g_mid, ch1["f"], ch1["g"]),
            Segment(301, f_late, g_late, ch2["f"], ch2["g"]),
        ))
        return schedule, SQUARE_0_6, noise, DelaySpec()
    raise ValueError(f"unknown environment {name!r}; registry: {', '.join(REGISTRY)}")


@dataclass
class Environment:
    schedule: FunctionSchedule
    domain: BoxDomain
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    delay: DelaySpec = field(default_factory=DelaySpec)
    name: str = "custom"

    @classmethod
    def from_name(cls, name: str, noise: NoiseSpec | None = None,
                  delay: DelaySpec | None = None, variation_norms: dict | None = None):
        schedule, domain, n0, d0 = builtin(name, variation_norms)
        return cls(schedule, domain, noise or n0, delay or d0, name)

    def _check(self, x, t):
        if not self.domain.contains(x):
            raise ValueError(f"point {np.ravel(x).tolist()} outside domain")
        if t < 1:
            raise ValueError(f"round must be >= 1, got {t}")

    def true_values(self, x, t: int) -> tuple:
        """Noise-free ``(f_t(x), g_t(x))``; for metrics only."""
        self._check(x, t)
        seg = self.schedule.at(t)
        X = np.asarray(x, dtype=float).reshape(1, -1)
        return float(seg.f(X)[0]), float(seg.g(X)[0])

    def step(self, x, t: int, streams: RngStreams) -> FeedbackEvent:
        f_val, g_val = self.true_values(x, t)
        r = f_val + float(streams["reward-noise"].normal(0.0, math.sqrt(self.noise.reward_noise_var)))
        c = g_val + float(streams["cost-noise"].normal(0.0, math.sqrt(self.noise.cost_noise_var)))
        d_r = self.delay.sample(streams["reward-delay"])
        d_c = self.delay.sample(streams["cost-delay"])
        return FeedbackEvent(t, tuple(float(v) for v in np.ravel(x)), r, c, d_r, d_c)

    def variation_series(self, T: int) -> np.ndarray:
        """Array of shape ``(T + 1, 2)``; row ``s`` holds the change norms after round ``s``."""
        out = np.zeros((T + 1, 2))
        for s in range(1, T + 1):
            out[s] = self.schedule.variation(s)
        return out


def step(env: Environment, x, t: int, rng: RngStreams) -> FeedbackEvent:
    return env.step(x, t, rng)


def true_values(env: Environment, x, t: int) -> tuple:
    return env.true_values(x, t)


def rkhs_norm_estimate(h, domain: BoxDomain, lengthscale: float, resolution: int = 25,
                       nugget: float = 1e-6) -> float:
    """Estimate ``||h||_k`` for the SE kernel from dense samples on ``domain``.

    Uses the minimum-norm regularised interpolant ``sqrt(h^T (K + nugget I)^{-1} h)``
    on a ``resolution^d`` grid.
    """
    from .kernel_gp import SquaredExponential
    from .optimize import grid_points

    Z = grid_points(domain, resolution)
    K = SquaredExponential(lengthscale)(Z, Z)
    hv = np.asarray(h(Z), dtype=float)
    L = np.linalg.cholesky(K + nugget * np.eye(len(Z)))
    w = np.linalg.solve(L, hv)
    return float(math.sqrt(w @ w))
