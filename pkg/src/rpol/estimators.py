"""Optimistic reward / pessimistic cost estimators and their confidence scalers."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .kernel_gp import GPState


@dataclass(frozen=True)
class ConfidenceParams:
    """RKHS norm bounds, sub-Gaussian noise scales, failure probability, horizon."""

    B_f: float = 2.0
    B_g: float = 2.0
    R_f: float = math.sqrt(0.05)
    R_g: float = math.sqrt(0.05)
    p: float = 0.05
    T: int = 500

    def __post_init__(self):
        for name in ("B_f", "B_g"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        for name in ("R_f", "R_g"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if not 0 < self.p < 1:
            raise ValueError(f"p must lie in (0, 1), got {self.p}")
        if self.T < 1:
            raise ValueError("T must be >= 1")


@dataclass
class EstimatorPair:
    """Optimistic ``f_hat`` and pessimistic ``g_check`` for one round.

    Both callables take a single point (returns a float) or an ``(n, d)``
    array (returns an array).
    """

    f_hat: Callable
    g_check: Callable
    diagnostics: dict = field(default_factory=dict)


def beta(B: float, R: float, gamma_hat: float, p: float) -> float:
    """Improved GP-UCB width ``B + R sqrt(2 (gamma + 1 + ln(2/p)))``."""
    _check_p(p)
    return B + R * math.sqrt(2.0 * (gamma_hat + 1.0 + math.log(2.0 / p)))


def observation_bound(B: float, R: float, T: int) -> float:
    """High-probability bound ``B + R sqrt(2 ln T)`` on a raw observation."""
    return B + R * math.sqrt(2.0 * math.log(T))


def censored_beta(B: float, R: float, B_obs: float, gamma_hat: float, p: float) -> float:
    _check_p(p)
    return B + (R + B_obs) * math.sqrt(2.0 * (gamma_hat + 1.0 + math.log(4.0 / p)))


def sw_beta(B: float, R: float, gamma_window: float, lam: float, T: int, p: float) -> float:
    _check_p(p)
    return B + R / math.sqrt(lam) * math.sqrt(2.0 * gamma_window + 2.0 * math.log(2.0 * T / p))


def sw_drift_coefficient(W: int, lam: float, gamma: float) -> float:
    """Multiplier turning window-summed variation into a bias allowance."""
    if W < 1:
        raise ValueError(f"W must be >= 1, got {W}")
    return math.sqrt(2.0 * W * (1.0 + lam) * gamma) / lam


def _check_p(p):
    if not 0 < p < 1:
        raise ValueError(f"p must lie in (0, 1), got {p}")


def _lift(fn):
    """Make an array-valued function also accept a single point."""

    def wrapped(x):
        arr = np.asarray(x, dtype=float) if not isinstance(x, np.ndarray) else x
        if arr.ndim == 1:
            return float(fn(arr[None, :])[0])
        return fn(arr)

    return wrapped


def _pair(gp_f, gp_g, width_f, width_g, shift_f=0.0, shift_g=0.0, diagnostics=None):
    def f_hat(X):
        mu, sd = gp_f.predict(X)
        return mu + width_f * sd + shift_f

    def g_check(X):
        mu, sd = gp_g.predict(X)
        return mu - width_g * sd - shift_g

    return EstimatorPair(_lift(f_hat), _lift(g_check), dict(diagnostics or {}))


def ucb_pair(gp_f: GPState, gp_g: GPState, params: ConfidenceParams) -> EstimatorPair:
    b_f = beta(params.B_f, params.R_f, gp_f.info_gain(), params.p)
    b_g = beta(params.B_g, params.R_g, gp_g.info_gain(), params.p)
    return _pair(gp_f, gp_g, b_f, b_g,
                 diagnostics={"beta_f": b_f, "beta_g": b_g, "extra_f": 0.0, "extra_g": 0.0})


def censored_pair(gp_f: GPState, gp_g: GPState, recent_points, params: ConfidenceParams,
                  m: int) -> EstimatorPair:
    """Censored UCB/LCB; ``recent_points`` are the last (at most ``m``) decisions."""
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    recent = np.asarray(recent_points, dtype=float)
    if recent.size and len(recent) > m:
        raise ValueError(f"recent_points holds {len(recent)} > m={m} points")
    B_r = observation_bound(params.B_f, params.R_f, params.T)
    B_c = observation_bound(params.B_g, params.R_g, params.T)
    b_f = censored_beta(params.B_f, params.R_f, B_r, gp_f.info_gain(), params.p)
    b_g = censored_beta(params.B_g, params.R_g, B_c, gp_g.info_gain(), params.p)
    if recent.size:
        sum_f = float(np.sum(gp_f.predict(recent)[1]))
        sum_g = float(np.sum(gp_g.predict(recent)[1]))
    else:
        sum_f = sum_g = 0.0
    v_f = B_r * sum_f + b_f
    v_g = B_c * sum_g + b_g
    diag = {"beta_f": b_f, "beta_g": b_g, "extra_f": v_f, "extra_g": v_g,
            "B_r": B_r, "B_c": B_c, "v_f": v_f, "v_g": v_g}
    return _pair(gp_f, gp_g, v_f, v_g, diagnostics=diag)


def sw_pair(gp_f: GPState, gp_g: GPState, variation_in_window, params: ConfidenceParams,
            W: int, gamma_cap: float | None = None) -> EstimatorPair:
    """Sliding-window UCB/LCB with a drift allowance.

    ``variation_in_window`` is the pair of window-summed variation norms of the
    reward and cost functions.  The horizon information gain inside the drift
    coefficient is replaced by the current windowed plug-in value, optionally
    capped.
    """
    if W < 1:
        raise ValueError(f"W must be >= 1, got {W}")
    var_f, var_g = (float(v) for v in variation_in_window)
    lam = gp_f.lam
    gam_f, gam_g = gp_f.info_gain(), gp_g.info_gain()
    b_f = sw_beta(params.B_f, params.R_f, gam_f, lam, params.T, params.p)
    b_g = sw_beta(params.B_g, params.R_g, gam_g, lam, params.T, params.p)
    if gamma_cap is not None:
        gam_f, gam_g = min(gam_f, gamma_cap), min(gam_g, gamma_cap)
    C_f = sw_drift_coefficient(W, lam, gam_f)
    C_g = sw_drift_coefficient(W, gp_g.lam, gam_g)
    Gam_f, Gam_g = C_f * var_f, C_g * var_g
    diag = {"beta_f": b_f, "beta_g": b_g, "extra_f": Gam_f, "extra_g": Gam_g,
            "C_f": C_f, "C_g": C_g, "Gamma_f": Gam_f, "Gamma_g": Gam_g}
    return _pair(gp_f, gp_g, b_f, b_g, Gam_f, Gam_g, diagnostics=diag)
