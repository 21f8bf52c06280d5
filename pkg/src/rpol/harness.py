"""Experiment loop, regret/violation metrics, comparator, aggregation and trace I/O."""

from __future__ import annotations

import csv
import functools
import io
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import ExperimentConfig
from .environments import DelaySpec, Environment, NoiseSpec, RngStreams, load_variation_norms
from .estimators import ConfidenceParams
from .kernel_gp import SquaredExponential
from .optimize import GridOptimizer, GridSpec, constrained_oracle
from .policy import Arrival, PolicyVariant, RpolAgent

# invoked with every finished trace; the test suite hooks invariant checks here
TRACE_HOOKS: list = []

DIAG_COLUMNS = ("Q", "beta_f", "beta_g", "extra_scaler", "sigma_f", "sigma_g")


@dataclass
class Trace:
    """Per-round record of one run.

    ``r_obs``/``c_obs`` are NaN for observations not revealed within the
    horizon.  ``extras`` holds diagnostics that are not part of the CSV
    schema (information gains, GP sizes, latest round seen by each GP).
    """

    X: np.ndarray
    f_true: np.ndarray
    g_true: np.ndarray
    r_obs: np.ndarray
    c_obs: np.ndarray
    Q: np.ndarray
    beta_f: np.ndarray
    beta_g: np.ndarray
    extra_scaler: np.ndarray
    sigma_f: np.ndarray
    sigma_g: np.ndarray
    meta: dict = field(default_factory=dict)
    extras: dict = field(default_factory=dict)
    q_final: float = float("nan")

    @property
    def T(self) -> int:
        return len(self.f_true)

    @property
    def t(self) -> np.ndarray:
        return np.arange(1, self.T + 1)

    @property
    def columns(self) -> list:
        d = self.X.shape[1]
        return (["t"] + [f"x_{i + 1}" for i in range(d)]
                + ["f_true", "g_true", "r_obs", "c_obs"] + list(DIAG_COLUMNS))

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        for i in range(self.T):
            row = [str(i + 1)] + [repr(float(v)) for v in self.X[i]]
            row += [repr(float(self.f_true[i])), repr(float(self.g_true[i]))]
            row += ["" if math.isnan(v) else repr(float(v)) for v in (self.r_obs[i], self.c_obs[i])]
            row += [repr(float(getattr(self, c)[i])) for c in DIAG_COLUMNS]
            w.writerow(row)
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_csv(cls, path, meta: dict | None = None) -> "Trace":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], rows[1:]
        col = {name: j for j, name in enumerate(header)}
        d = sum(1 for h in header if h.startswith("x_"))

        def arr(name):
            return np.array([float(r[col[name]]) if r[col[name]] != "" else np.nan for r in body])

        X = np.column_stack([arr(f"x_{i + 1}") for i in range(d)]) if body else np.zeros((0, d))
        return cls(X, arr("f_true"), arr("g_true"), arr("r_obs"), arr("c_obs"),
                   *(arr(c) for c in DIAG_COLUMNS), meta=dict(meta or {}))


# ----------------------------------------------------------------------
# comparator
# ----------------------------------------------------------------------
class PrimalDualAgent(RpolAgent):
    """Stand-in primal-dual comparator (not a published algorithm).

    Maximises ``f_hat - dual * g_check`` without a rectifier and updates
    ``dual <- max(dual + step * c, 0)`` with each revealed cost.  With
    ``step = 0`` it is plain GP-UCB on the reward.
    """

    def __init__(self, *args, step: float = 0.0, **kwargs):
        super().__init__(*args, **kwargs)
        self.step_size = float(step)
        self.penalty.Q = 0.0

    def objective(self, pair):
        dual = self.penalty.Q
        if dual == 0.0:
            return pair.f_hat
        return lambda X: pair.f_hat(X) - dual * pair.g_check(X)

    def update_multiplier(self, Q, revealed, t):
        for c in revealed:
            Q = max(Q + self.step_size * float(c), 0.0)
        return Q


# ----------------------------------------------------------------------
# running experiments
# ----------------------------------------------------------------------
def make_environment(cfg: ExperimentConfig) -> Environment:
    noise = NoiseSpec(cfg.reward_noise_var, cfg.cost_noise_var)
    delay = DelaySpec(cfg.delay, mean=cfg.delay_mean, d=cfg.delay_fixed)
    norms = None
    if cfg.environment == "scbwc-nonstationary" and (cfg.variation_f or cfg.variation_g):
        base = load_variation_norms()["changes"]
        vf = cfg.variation_f or [c["f"] for c in base]
        vg = cfg.variation_g or [c["g"] for c in base]
        norms = {"changes": [{"f": a, "g": b} for a, b in zip(vf, vg)]}
    return Environment.from_name(cfg.environment, noise, delay, norms)


def make_agent(cfg: ExperimentConfig, env: Environment, optimizer: GridOptimizer) -> RpolAgent:
    params = ConfidenceParams(cfg.B_f, cfg.B_g, cfg.R_f, cfg.R_g, cfg.p, cfg.T)
    kernel = SquaredExponential(cfg.lengthscale)
    if cfg.variant == "primal-dual":
        return PrimalDualAgent(PolicyVariant("rpol-ucb"), params, kernel, cfg.lam, optimizer,
                               step=cfg.dual_step)
    variant = PolicyVariant(cfg.variant, m=cfg.m, W=cfg.W, scalers=cfg.scalers)
    variation = None
    if cfg.variant == "rpol-sw-ucb" and not cfg.practical:
        variation = env.variation_series(cfg.T)
    return RpolAgent(variant, params, kernel, cfg.lam, optimizer,
                     variation=variation, gamma_cap=cfg.gamma_cap)


@functools.lru_cache(maxsize=32)
def _grid_optimizer(domain, resolution):
    return GridOptimizer.from_domain(domain, resolution)


def run(cfg: ExperimentConfig, seed: int | None = None) -> Trace:
    """Play one seed of an experiment and return its trace."""
    seed = cfg.seed if seed is None else int(seed)
    env = make_environment(cfg)
    optimizer = _grid_optimizer(env.domain, cfg.grid)
    agent = make_agent(cfg, env, optimizer)
    meta = {"seed": seed, "variant": cfg.variant, "config_hash": cfg.config_hash(),
            "environment": cfg.environment, "T": cfg.T}
    return simulate(agent, env, cfg.T, seed, meta)


def simulate(agent: RpolAgent, env: Environment, T: int, seed: int, meta: dict | None = None) -> Trace:
    """Round loop shared by every experiment.

    Feedback with delay ``d >= 1`` issued at round ``s`` is handed to the
    agent at the start of round ``s + d``; zero-delay feedback right after
    the decision of its own round.
    """
    streams = RngStreams(seed)
    d = env.domain.dim
    X = np.zeros((T, d))
    f_true, g_true = np.zeros(T), np.zeros(T)
    r_obs, c_obs = np.full(T, np.nan), np.full(T, np.nan)
    diag_cols = {c: np.zeros(T) for c in DIAG_COLUMNS}
    extras = {k: np.zeros(T) for k in ("gamma_f", "gamma_g", "n_f", "n_g",
                                       "latest_f", "latest_g", "extra_g")}
    pending: dict = {}

    for t in range(1, T + 1):
        try:
            for arrival in pending.pop(t, []):
                agent.receive(arrival)
            decision = agent.decide(t)
            x = decision.point
            event = env.step(x, t, streams)
            X[t - 1] = x
            f_true[t - 1], g_true[t - 1] = env.true_values(x, t)
            for channel, value, delay in (("reward", event.reward_obs, event.reward_delay),
                                          ("cost", event.cost_obs, event.cost_delay)):
                arrival = Arrival(channel, t, value, t + delay)
                if delay == 0:
                    agent.receive(arrival)
                else:
                    pending.setdefault(t + delay, []).append(arrival)
                if t + delay <= T:
                    (r_obs if channel == "reward" else c_obs)[t - 1] = value
            diag = decision.diagnostics
            for c in ("Q", "beta_f", "beta_g", "sigma_f", "sigma_g"):
                diag_cols[c][t - 1] = diag[c]
            diag_cols["extra_scaler"][t - 1] = diag["extra_f"]
            extras["extra_g"][t - 1] = diag["extra_g"]
            for k in ("gamma_f", "gamma_g", "n_f", "n_g", "latest_f", "latest_g"):
                extras[k][t - 1] = diag[k]
            agent.finish_round(t)
        except Exception as exc:
            raise RuntimeError(f"run failed at round {t}: {exc}") from exc

    trace = Trace(X, f_true, g_true, r_obs, c_obs, **diag_cols,
                  meta=dict(meta or {"seed": seed, "T": T}), extras=extras,
                  q_final=agent.penalty.Q)
    for hook in TRACE_HOOKS:
        hook(trace)
    return trace


def primal_dual_baseline(cfg: ExperimentConfig, seed: int | None = None) -> Trace:
    """Run the labelled primal-dual stand-in with the config's ``dual_step``."""
    import dataclasses

    return run(dataclasses.replace(cfg, variant="primal-dual", scalers=None), seed)


# ----------------------------------------------------------------------
# oracle and metrics
# ----------------------------------------------------------------------
@functools.lru_cache(maxsize=16)
def _segment_oracles(environment: str, resolution: int, variation_key=None):
    env = Environment.from_name(environment)
    out = []
    for seg in env.schedule.segments:
        x, fx = constrained_oracle(seg.f, seg.g, env.domain, GridSpec(resolution, refine_steps=10000))
        out.append((seg.start_round, tuple(float(v) for v in x), fx))
    return tuple(out)


def oracle_fixture(environment: str, resolution: int = 1000) -> dict:
    """Per-segment constrained optimum ``x*``, ``f*`` of a registered environment."""
    segs = _segment_oracles(environment, resolution)
    return {"environment": environment, "resolution": resolution,
            "segments": [{"start_round": s, "x_star": list(x), "f_star": f} for s, x, f in segs]}


def oracle_series(environment: str, T: int, resolution: int = 1000, fixture: dict | None = None):
    """``f_t(x_t*)`` for rounds ``1..T`` (constant for stationary environments)."""
    fixture = fixture or oracle_fixture(environment, resolution)
    segs = fixture["segments"]
    out = np.zeros(T)
    for t in range(1, T + 1):
        val = segs[0]["f_star"]
        for s in segs:
            if s["start_round"] <= t:
                val = s["f_star"]
        out[t - 1] = val
    return out


def regret(trace: Trace, oracle_value) -> np.ndarray:
    """Cumulative regret ``sum_s f_s(x_s*) - f_s(x_s)``; ``oracle_value`` scalar or per-round."""
    fstar = np.broadcast_to(np.asarray(oracle_value, dtype=float), trace.f_true.shape)
    return np.cumsum(fstar - trace.f_true)


def violation(trace: Trace):
    """Cumulative hard violation ``sum g^+`` and soft violation ``sum g``."""
    g = np.asarray(trace.g_true, dtype=float)
    return np.cumsum(np.maximum(g, 0.0)), np.cumsum(g)


@dataclass
class MetricSeries:
    regret: np.ndarray
    violation: np.ndarray
    soft_violation: np.ndarray

    @property
    def t(self):
        return np.arange(1, len(self.regret) + 1)

    @property
    def avg_regret(self):
        return self.regret / self.t

    @property
    def avg_violation(self):
        return self.violation / self.t

    @property
    def avg_soft_violation(self):
        return self.soft_violation / self.t


def metrics(trace: Trace, oracle_value) -> MetricSeries:
    v, s = violation(trace)
    return MetricSeries(regret(trace, oracle_value), v, s)


SUMMARY_COLUMNS = ("t", "mean_avg_regret", "std_avg_regret", "mean_avg_violation",
                   "std_avg_violation", "mean_avg_soft_violation", "std_avg_soft_violation")


@dataclass
class Summary:
    mean_avg_regret: np.ndarray
    std_avg_regret: np.ndarray
    mean_avg_violation: np.ndarray
    std_avg_violation: np.ndarray
    mean_avg_soft_violation: np.ndarray
    std_avg_soft_violation: np.ndarray
    seeds: list = field(default_factory=list)

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(SUMMARY_COLUMNS)
        for i in range(len(self.mean_avg_regret)):
            w.writerow([str(i + 1)] + [repr(float(getattr(self, c)[i])) for c in SUMMARY_COLUMNS[1:]])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text


def _mean_std(rows: np.ndarray):
    mean = rows.mean(axis=0)
    std = rows.std(axis=0, ddof=1) if rows.shape[0] > 1 else np.zeros(rows.shape[1])
    return mean, std


def aggregate(traces, oracle_value=None) -> Summary:
    """Per-round mean and sample std across seeds of the averaged metrics.

    Traces must share a config hash; the fold is ordered by seed.
    """
    traces = sorted(traces, key=lambda tr: tr.meta.get("seed", 0))
    if not traces:
        raise ValueError("no traces to aggregate")
    hashes = {tr.meta.get("config_hash") for tr in traces}
    if len(hashes) > 1:
        raise ValueError(f"heterogeneous configs: {sorted(map(str, hashes))}")
    if oracle_value is None:
        tr0 = traces[0]
        oracle_value = oracle_series(tr0.meta["environment"], tr0.T)
    ms = [metrics(tr, oracle_value) for tr in traces]
    cols = {}
    for name in ("avg_regret", "avg_violation", "avg_soft_violation"):
        mean, std = _mean_std(np.vstack([getattr(m, name) for m in ms]))
        cols[f"mean_{name}"], cols[f"std_{name}"] = mean, std
    return Summary(**cols, seeds=[tr.meta.get("seed") for tr in traces])


def run_seeds(cfg: ExperimentConfig, workers: int = 1, seeds=None) -> list:
    """Run every seed of ``cfg``; parallel across processes when ``workers > 1``."""
    seeds = list(cfg.seeds if seeds is None else seeds)
    if workers <= 1 or len(seeds) == 1:
        return [run(cfg, s) for s in seeds]
    from concurrent.futures import ProcessPoolExecutor

    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(run, [cfg] * len(seeds), seeds))
