"""Rectified penalty decision rule and the per-round agent loop.

The agent only ever sees its own decisions and the feedback values handed to
it through :meth:`RpolAgent.receive`; it has no access to the environment.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .estimators import ConfidenceParams, EstimatorPair, censored_pair, sw_pair, ucb_pair
from .kernel_gp import CholeskyError, GPState, SquaredExponential, window_start

KINDS = ("rpol-ucb", "rpol-censored-ucb", "rpol-sw-ucb")
SCALERS = ("ucb", "censored", "sw")


@dataclass(frozen=True)
class PolicyVariant:
    """Which RPOL instantiation to run.

    ``scalers`` lets the full-history variant borrow the confidence widths of
    the censored or sliding-window estimators; the other kinds fix it.
    """

    kind: str = "rpol-ucb"
    m: int = 25
    W: int = 100
    scalers: str | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown variant {self.kind!r}; expected one of {KINDS}")
        if self.m < 1:
            raise ValueError(f"m must be >= 1, got {self.m}")
        if self.W < 1:
            raise ValueError(f"W must be >= 1, got {self.W}")
        if self.scalers is not None and self.scalers not in SCALERS:
            raise ValueError(f"unknown scalers {self.scalers!r}")

    @property
    def effective_scalers(self) -> str:
        if self.kind == "rpol-censored-ucb":
            return "censored"
        if self.kind == "rpol-sw-ucb":
            return "sw"
        return self.scalers or "ucb"


@dataclass
class PenaltyState:
    Q: float = 1.0
    t: int = 1


def update_penalty(Q: float, c_plus: float, t: int) -> float:
    """``max(Q + c_plus, sqrt(t))``."""
    if c_plus < 0:
        raise ValueError(f"c_plus must be nonnegative, got {c_plus}")
    return max(Q + c_plus, math.sqrt(t))


def update_penalty_delayed(Q: float, revealed_costs, t: int) -> float:
    """Add the positive parts of every cost revealed this round, then floor at ``sqrt(t)``."""
    total = sum(max(float(c), 0.0) for c in revealed_costs)
    return max(Q + total, math.sqrt(t))


def rectified_surrogate(pair: EstimatorPair, Q: float):
    def objective(X):
        return pair.f_hat(X) - Q * np.maximum(pair.g_check(X), 0.0)

    return objective


def select_action(pair: EstimatorPair, Q: float, optimizer):
    """Point maximising ``f_hat - Q * max(g_check, 0)`` over the optimizer's search set."""
    if Q < 1:
        raise ValueError(f"Q must be >= 1, got {Q}")
    _, x = optimizer.argmax(rectified_surrogate(pair, Q))
    return x


@dataclass(frozen=True)
class Arrival:
    """One revealed observation: ``channel`` is ``"reward"`` or ``"cost"``."""

    channel: str
    issued_round: int
    value: float
    arrival_round: int

    @property
    def delay(self) -> int:
        return self.arrival_round - self.issued_round


@dataclass
class Decision:
    t: int
    index: int
    point: np.ndarray
    diagnostics: dict = field(default_factory=dict)


class RpolAgent:
    """Runs one RPOL variant round by round.

    Per round the harness calls :meth:`receive` for feedback revealed at the
    start of the round, :meth:`decide`, :meth:`receive` for zero-delay
    feedback, then :meth:`finish_round`.

    Parameters
    ----------
    variant : PolicyVariant
    params : ConfidenceParams
    kernel : SquaredExponential
    lam : float
    optimizer : GridOptimizer
        Finite search set; its ``points`` array is also the GP cache grid.
    variation : array, optional
        Row ``s`` holds the reward/cost change norms between rounds ``s`` and
        ``s + 1``; ``None`` means no drift allowance.
    gamma_cap : float, optional
        Cap on the information gain inside the drift coefficient.
    """

    def __init__(self, variant: PolicyVariant, params: ConfidenceParams,
                 kernel: SquaredExponential, lam: float, optimizer,
                 variation=None, gamma_cap: float | None = None):
        self.variant = variant
        self.params = params
        self.kernel = kernel
        self.lam = float(lam)
        self.optimizer = optimizer
        self.grid = optimizer.points
        self.variation = None if variation is None else np.asarray(variation, dtype=float)
        self.gamma_cap = gamma_cap
        dim = self.grid.shape[1]
        self.gp_f = GPState(kernel, lam, dim, "reward").attach_grid(self.grid)
        self.gp_g = GPState(kernel, lam, dim, "cost").attach_grid(self.grid)
        self._ids = {"reward": [], "cost": []}
        self.penalty = PenaltyState()
        self.points: list = []
        self.arrivals = {"reward": {}, "cost": {}}
        self._order = {"reward": [], "cost": []}
        self._arrived_this_round: list = []
        self.t = 0

    # ------------------------------------------------------------------
    def receive(self, arrival: Arrival):
        if arrival.channel not in ("reward", "cost"):
            raise ValueError(f"unknown channel {arrival.channel!r}")
        if arrival.issued_round > len(self.points):
            raise ValueError("feedback for a round that has not been played")
        self.arrivals[arrival.channel][arrival.issued_round] = arrival
        self._order[arrival.channel].append(arrival.issued_round)
        if arrival.channel == "cost":
            self._arrived_this_round.append(arrival)

    def decide(self, t: int) -> Decision:
        if t != len(self.points) + 1:
            raise ValueError(f"expected round {len(self.points) + 1}, got {t}")
        self.t = t
        try:
            self._sync_models(t)
        except CholeskyError as exc:
            raise CholeskyError(f"{exc} (policy round {t})", t) from exc
        pair = self.estimators(t)
        idx, x = self.optimizer.argmax(self.objective(pair))
        _, sd_f = self.gp_f.predict(self.grid)
        _, sd_g = self.gp_g.predict(self.grid)
        diag = dict(pair.diagnostics)
        diag.update(
            Q=self.penalty.Q,
            sigma_f=float(sd_f[idx]),
            sigma_g=float(sd_g[idx]),
            gamma_f=self.gp_f.info_gain(),
            gamma_g=self.gp_g.info_gain(),
            n_f=len(self.gp_f),
            n_g=len(self.gp_g),
            latest_f=max(self._ids["reward"], default=0),
            latest_g=max(self._ids["cost"], default=0),
        )
        self.points.append(np.array(x, dtype=float))
        return Decision(t, idx, np.array(x, dtype=float), diag)

    def finish_round(self, t: int) -> float:
        revealed = [a.value for a in self._arrived_this_round if a.arrival_round == t]
        self._arrived_this_round = [a for a in self._arrived_this_round if a.arrival_round > t]
        self.penalty.Q = self.update_multiplier(self.penalty.Q, revealed, t)
        self.penalty.t = t + 1
        return self.penalty.Q

    # ------------------------------------------------------------------
    # hooks overridden by comparators
    # ------------------------------------------------------------------
    def objective(self, pair: EstimatorPair):
        return rectified_surrogate(pair, self.penalty.Q)

    def update_multiplier(self, Q: float, revealed, t: int) -> float:
        return update_penalty_delayed(Q, revealed, t)

    # ------------------------------------------------------------------
    def estimators(self, t: int) -> EstimatorPair:
        scalers = self.variant.effective_scalers
        if scalers == "ucb":
            return ucb_pair(self.gp_f, self.gp_g, self.params)
        if scalers == "censored":
            m = self.variant.m
            recent = self.points[max(1, t - m) - 1: t - 1]
            recent = np.array(recent) if recent else np.zeros((0, self.grid.shape[1]))
            return censored_pair(self.gp_f, self.gp_g, recent, self.params, m)
        W = self.variant.W
        drift = (0.0, 0.0)
        if self.variant.kind == "rpol-sw-ucb" and self.variation is not None:
            t0 = window_start(t, W)
            rows = self.variation[t0: t]
            drift = tuple(float(v) for v in rows.sum(axis=0)) if len(rows) else (0.0, 0.0)
        return sw_pair(self.gp_f, self.gp_g, drift, self.params, W, self.gamma_cap)

    def _sync_models(self, t: int):
        kind = self.variant.kind
        if kind == "rpol-censored-ucb":
            self._sync_censored(t)
            return
        for channel, gp in (("reward", self.gp_f), ("cost", self.gp_g)):
            desired = list(self._order[channel])
            if kind == "rpol-sw-ucb":
                t0 = window_start(t, self.variant.W)
                desired = [s for s in desired if t0 <= s <= t - 1]
            self._sync_one(channel, gp, desired)

    def _sync_one(self, channel, gp, desired):
        current = self._ids[channel]
        values = self.arrivals[channel]
        # keep the longest suffix of the current data that prefixes the new data
        drop = len(current)
        for k in range(len(current) + 1):
            tail = current[k:]
            if desired[: len(tail)] == tail:
                drop = k
                break
        if drop:
            gp.drop_oldest(drop)
        kept = len(current) - drop
        for s in desired[kept:]:
            gp.append(self.points[s - 1], values[s].value, round_index=s)
        self._ids[channel] = list(desired)

    def _sync_censored(self, t: int):
        m = self.variant.m
        for channel, gp in (("reward", self.gp_f), ("cost", self.gp_g)):
            arrived = self.arrivals[channel]
            targets = np.zeros(t - 1)
            for s, a in arrived.items():
                if s < t and a.delay <= min(m, t - s):
                    targets[s - 1] = a.value
            n = len(gp)
            old = gp.targets
            for s in range(n + 1, t):
                gp.append(self.points[s - 1], targets[s - 1], round_index=s)
            if n and not np.array_equal(old, targets[:n]):
                gp.set_targets(targets)
            self._ids[channel] = list(range(1, t))
