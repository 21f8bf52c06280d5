"""Replay checks on stored traces: penalty invariants and cumulative-width bounds.

Every check is a deterministic inequality in the realised decisions, so it is
asserted exactly (no tolerance).  The plug-in information gain is recomputed
from the trace's points with a dense log-determinant.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .estimators import observation_bound
from .kernel_gp import GPState, SquaredExponential


@dataclass
class CheckResult:
    name: str
    passed: bool
    lhs: float = float("nan")
    rhs: float = float("nan")
    detail: str = ""
    round_index: int | None = None

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        if math.isnan(self.lhs):
            return f"{status} {self.name}: {self.detail}"
        return f"{status} {self.name}: {self.lhs:.6g} <= {self.rhs:.6g} {self.detail}".rstrip()


@dataclass
class VerifyReport:
    checks: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def lines(self) -> list:
        return [c.line() for c in self.checks]


def plugin_gain(X, lengthscale: float, lam: float) -> float:
    """``0.5 * log det(I + K / lam)`` on the rows of ``X``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[0] == 0:
        return 0.0
    K = SquaredExponential(lengthscale)(X, X)
    sign, logdet = np.linalg.slogdet(np.eye(len(X)) + K / lam)
    return 0.5 * float(logdet)


def check_penalty(Q, q_final: float | None = None) -> CheckResult:
    """``Q`` column non-decreasing, ``Q_1 >= 1`` and ``Q_{t+1} >= sqrt(t)``.

    ``Q[i]`` is the multiplier used at round ``i + 1``.
    """
    Q = np.asarray(Q, dtype=float)
    seq = np.append(Q, q_final) if q_final is not None and np.isfinite(q_final) else Q
    if len(seq) and seq[0] < 1.0:
        return CheckResult("penalty", False, detail="Q below 1 at round 1", round_index=1)
    for i in range(1, len(seq)):
        t = i + 1
        if seq[i] < seq[i - 1]:
            return CheckResult("penalty", False,
                               detail=f"Q decreased at round {t}: {seq[i - 1]!r} -> {seq[i]!r}",
                               round_index=t)
        if seq[i] < math.sqrt(t - 1):
            return CheckResult("penalty", False,
                               detail=f"Q below sqrt({t - 1}) at round {t}: {seq[i]!r}",
                               round_index=t)
    return CheckResult("penalty", True, detail=f"{len(seq)} values")


def first_penalty_violation(Q, q_final: float | None = None) -> int | None:
    """Round index of the first penalty-invariant violation, or ``None``."""
    return check_penalty(Q, q_final).round_index


def _sum_bound(name, beta, sigma, X, lengthscale, lam):
    T = len(sigma)
    gamma = plugin_gain(X, lengthscale, lam)
    lhs = float(np.sum(np.asarray(beta) * np.asarray(sigma)))
    rhs = float(np.max(beta)) * math.sqrt(4.0 * T * lam * gamma)
    return CheckResult(name, lhs <= rhs, lhs, rhs, f"(gamma_hat={gamma:.4g})")


def check_ucb_bound(trace, lengthscale: float, lam: float) -> list:
    """Full-history bound ``sum beta_t sigma_t(x_t) <= beta_max sqrt(4 T lam gamma_T)``."""
    return [_sum_bound(f"ucb-width-{c}", getattr(trace, f"beta_{c}"), getattr(trace, f"sigma_{c}"),
                       trace.X, lengthscale, lam) for c in ("f", "g")]


def replay_censored_widths(X, lengthscale: float, lam: float, m: int):
    """Per round ``sum_{s=max(1,t-m)}^{t-1} sigma_t(x_s)`` with the GP on ``x_1..x_{t-1}``.

    The posterior standard deviation does not depend on the (censored)
    targets, so this is recomputable from the points alone.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    T = len(X)
    gp = GPState(SquaredExponential(lengthscale), lam, X.shape[1])
    out = np.zeros(T)
    for t in range(1, T + 1):
        lo = max(1, t - m)
        if t > 1:
            _, sd = gp.predict(X[lo - 1: t - 1])
            out[t - 1] = float(np.sum(sd))
        gp.append(X[t - 1], 0.0)
    return out


def check_censored_bound(trace, lengthscale: float, lam: float, m: int, params) -> list:
    """``sum v_t sigma_t(x_t) <= beta_max sqrt(4 T lam gamma) + m B_r 4 lam gamma``.

    The recorded reward ``v`` must also match its replay from the points.
    """
    T = trace.T
    gamma = plugin_gain(trace.X, lengthscale, lam)
    sums = replay_censored_widths(trace.X, lengthscale, lam, m)
    results = []
    for c, B, R in (("f", params.B_f, params.R_f), ("g", params.B_g, params.R_g)):
        B_obs = observation_bound(B, R, params.T)
        beta = np.asarray(getattr(trace, f"beta_{c}"))
        v = B_obs * sums + beta
        if c == "f":
            recorded = np.asarray(trace.extra_scaler)
            bad = np.flatnonzero(~np.isclose(recorded, v, rtol=1e-9, atol=1e-9))
            if bad.size:
                t = int(bad[0]) + 1
                results.append(CheckResult("censored-v-replay", False, round_index=t,
                                           detail=f"recorded v differs from replay at round {t}"))
        sigma = np.asarray(getattr(trace, f"sigma_{c}"))
        lhs = float(np.sum(v * sigma))
        rhs = float(np.max(beta)) * math.sqrt(4.0 * T * lam * gamma) + m * B_obs * 4.0 * lam * gamma
        results.append(CheckResult(f"censored-width-{c}", lhs <= rhs, lhs, rhs,
                                   f"(gamma_hat={gamma:.4g})"))
    return results


def block_gain(X, lengthscale: float, lam: float, W: int) -> float:
    """Largest plug-in gain over consecutive blocks of ``W`` rounds.

    A trailing partial block of ``n < W`` rounds contributes ``gain * W / n``,
    i.e. its gain per round scaled to a full block.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    best = 0.0
    for start in range(0, len(X), W):
        block = X[start: start + W]
        best = max(best, plugin_gain(block, lengthscale, lam) * W / len(block))
    return best


def check_window_bound(trace, lengthscale: float, lam: float, W: int) -> list:
    """``sum beta_t sigma_t(x_t) <= beta_max T sqrt(4 lam gamma_W / W)`` with block gains."""
    T = trace.T
    gamma = block_gain(trace.X, lengthscale, lam, W)
    out = []
    for c in ("f", "g"):
        beta = np.asarray(getattr(trace, f"beta_{c}"))
        lhs = float(np.sum(beta * np.asarray(getattr(trace, f"sigma_{c}"))))
        rhs = float(np.max(beta)) * T * math.sqrt(4.0 * lam * gamma / W)
        out.append(CheckResult(f"window-width-{c}", lhs <= rhs, lhs, rhs,
                               f"(block gamma_hat={gamma:.4g})"))
    return out


def verify_trace(trace, cfg) -> VerifyReport:
    """Run every check that applies to the trace's variant."""
    from .estimators import ConfidenceParams

    report = VerifyReport()
    if cfg.variant != "primal-dual":
        report.checks.append(check_penalty(trace.Q, getattr(trace, "q_final", None)))
    if cfg.variant == "rpol-censored-ucb":
        params = ConfidenceParams(cfg.B_f, cfg.B_g, cfg.R_f, cfg.R_g, cfg.p, cfg.T)
        report.checks += check_censored_bound(trace, cfg.lengthscale, cfg.lam, cfg.m, params)
    elif cfg.variant == "rpol-sw-ucb":
        report.checks += check_window_bound(trace, cfg.lengthscale, cfg.lam, cfg.W)
    elif cfg.delay == "none":
        # full-history GP on every earlier decision; the scaler choice only changes beta
        report.checks += check_ucb_bound(trace, cfg.lengthscale, cfg.lam)
    return report
