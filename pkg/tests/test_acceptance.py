"""Acceptance criteria 1-10, each at its stated tolerance.

One PASS/FAIL line per criterion is printed in the terminal summary.  The
trend criteria share one set of 20-seed experiment runs.
"""

import math
import time

import numpy as np
import pytest

from conftest import PENALTY_LOG, record
from rpol.cli import main as cli_main
from rpol.config import parse_config
from rpol.estimators import EstimatorPair, beta
from rpol.harness import metrics, oracle_series, run
from rpol.kernel_gp import GPState, SquaredExponential
from rpol.optimize import GridOptimizer, grid_points
from rpol.environments import SQUARE_0_6
from rpol.policy import select_action
from rpol.verify import verify_trace

SEEDS = list(range(1, 21))
T = 500

EXPERIMENTS = {
    "stationary": dict(environment="scbwc", variant="rpol-ucb"),
    "unconstrained": dict(environment="scbwc", variant="primal-dual", dual_step=0.0),
    "delayed": dict(environment="scbwc-delayed", variant="rpol-censored-ucb", m=25,
                    delay="poisson", delay_mean=15.0),
    "nonstationary-sw": dict(environment="scbwc-nonstationary", variant="rpol-sw-ucb"),
    "nonstationary-full": dict(environment="scbwc-nonstationary", variant="rpol-ucb"),
}


@pytest.fixture(scope="module")
def experiments():
    out = {}
    for name, spec in EXPERIMENTS.items():
        cfg = parse_config(dict(spec, T=T, grid=100, seeds=SEEDS))
        oracle = oracle_series(cfg.environment, T, cfg.oracle_grid)
        start = time.perf_counter()
        traces = [run(cfg, s) for s in SEEDS]
        elapsed = time.perf_counter() - start
        ms = [metrics(tr, oracle) for tr in traces]
        out[name] = {
            "cfg": cfg,
            "traces": traces,
            "seconds": elapsed,
            "avg_regret": np.mean([m.avg_regret for m in ms], axis=0),
            "avg_violation": np.mean([m.avg_violation for m in ms], axis=0),
            "f_true": np.mean([tr.f_true for tr in traces], axis=0),
        }
    return out


def at(series, t):
    return float(series[t - 1])


def non_increasing(series, t0, t1):
    """Rounds in ``t0+1..t1`` where the series went up."""
    seg = np.asarray(series[t0 - 1: t1])
    return [t0 + 1 + int(i) for i in np.flatnonzero(np.diff(seg) > 0)]


# ----------------------------------------------------------------------
# 1. incremental posterior vs dense direct solve
# ----------------------------------------------------------------------
def test_criterion_1_gp_oracle_equivalence():
    rng = np.random.default_rng(2024)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(1, 51))
        u = float(rng.uniform(0.3, 3.0))
        lam = float(rng.uniform(0.5, 2.0))
        X = rng.uniform(0, 6, (n, 2))
        y = rng.normal(size=n)
        Xq = rng.uniform(0, 6, (50, 2))
        gp = GPState(SquaredExponential(u), lam, 2)
        for x, v in zip(X, y):
            gp.append(x, v)
        mean, std = gp.predict(Xq)
        k = SquaredExponential(u)
        M = k(X, X) + lam * np.eye(n)
        kq = k(X, Xq)
        ref_mean = kq.T @ np.linalg.solve(M, y)
        ref_std = np.sqrt(np.maximum(1.0 - np.sum(kq * np.linalg.solve(M, kq), axis=0), 0.0))
        worst = max(worst, np.max(np.abs(mean - ref_mean)), np.max(np.abs(std - ref_std)))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-8 and elapsed < 10
    record(1, ok, f"max abs deviation {worst:.2e} (tol 1e-8), {elapsed:.2f}s (limit 10s)")
    assert ok


# ----------------------------------------------------------------------
# 2. confidence coverage over 200 seeds
# ----------------------------------------------------------------------
def _random_rkhs_function(rng, B, u, n_centers=8):
    Z = rng.uniform(0, 6, (n_centers, 2))
    a = rng.normal(size=n_centers)
    k = SquaredExponential(u)
    norm = math.sqrt(a @ k(Z, Z) @ a)
    a *= B * rng.uniform(0.5, 1.0) / norm
    return lambda X: k(X, Z) @ a


def _coverage_holds(seed, T_cov, p, B, R, u, lam, grid):
    rng = np.random.default_rng(seed)
    f = _random_rkhs_function(rng, B, u)
    f_grid = f(grid)
    gp = GPState(SquaredExponential(u), lam, 2).attach_grid(grid)
    for _ in range(1, T_cov + 1):
        b = beta(B, R, gp.info_gain(), p)
        mu, sd = gp.predict(gp.grid)
        if np.any(np.abs(f_grid - mu) > b * sd):
            return False
        i = int(np.argmax(mu + b * sd))
        gp.append(grid[i], f_grid[i] + R * rng.normal())
    return True


def test_criterion_2_confidence_coverage():
    T_cov, p, B, R, u = 200, 0.1, 2.0, math.sqrt(0.05), 1.0
    lam = 1.0 + 2.0 / T_cov
    grid = grid_points(SQUARE_0_6, 20)
    n_seeds = 200
    start = time.perf_counter()
    hits = sum(_coverage_holds(s, T_cov, p, B, R, u, lam, grid) for s in range(n_seeds))
    elapsed = time.perf_counter() - start
    threshold = (1 - p) - 3 * math.sqrt(p * (1 - p) / n_seeds)
    frac = hits / n_seeds
    ok = frac >= threshold and elapsed < 300
    record(2, ok, f"coverage {frac:.3f} over {n_seeds} seeds (need >= {threshold:.3f}), "
                  f"{elapsed:.0f}s (limit 300s)")
    assert ok


# ----------------------------------------------------------------------
# 4. argmax vs exhaustive enumeration
# ----------------------------------------------------------------------
def test_criterion_4_argmax_oracle():
    rng = np.random.default_rng(77)
    mismatches = 0
    for _ in range(1000):
        n = int(rng.integers(1, 40))
        pts = rng.uniform(size=(n, 2))
        f = np.round(rng.normal(size=n), 2)
        g = np.round(rng.normal(size=n), 2)
        Q = float(rng.uniform(1, 20))
        pair = EstimatorPair(lambda X, f=f: f.copy(), lambda X, g=g: g.copy())
        x = select_action(pair, Q, GridOptimizer(pts))
        best, best_val = 0, -math.inf
        for i in range(n):
            val = f[i] - Q * max(g[i], 0.0)
            if val > best_val:
                best, best_val = i, val
        mismatches += not np.array_equal(x, pts[best])
    record(4, mismatches == 0, f"{mismatches} mismatches over 1000 tables")
    assert mismatches == 0


# ----------------------------------------------------------------------
# 5. variant degeneration
# ----------------------------------------------------------------------
def test_criterion_5_variant_degeneration():
    base = dict(T=50, seed=11)
    cens = run(parse_config(dict(base, environment="scbwc-delayed", variant="rpol-censored-ucb",
                                 delay="fixed", delay_fixed=0, m=50)))
    ucb_c = run(parse_config(dict(base, environment="scbwc-delayed", variant="rpol-ucb",
                                  scalers="censored", delay="fixed", delay_fixed=0, m=50)))
    sw = run(parse_config(dict(base, environment="scbwc", variant="rpol-sw-ucb", W=50)))
    ucb_s = run(parse_config(dict(base, environment="scbwc", variant="rpol-ucb", scalers="sw",
                                  W=50)))
    a = np.array_equal(cens.X, ucb_c.X)
    b = np.array_equal(sw.X, ucb_s.X)
    record(5, a and b, f"(a) censored path identical: {a}; (b) sliding-window path identical: {b}")
    assert a and b


# ----------------------------------------------------------------------
# 7-9. trends on the synthetic experiments
# ----------------------------------------------------------------------
def test_criterion_7_stationary_trend(experiments):
    e, u = experiments["stationary"], experiments["unconstrained"]
    V, R = e["avg_violation"], e["avg_regret"]
    ups = non_increasing(V, 100, T)
    a = not ups and at(V, T) <= 0.5 * at(V, 50)
    b = at(R, T) <= 0.6 * at(R, 100)
    c = at(V, T) < at(u["avg_violation"], T)
    runtime = e["seconds"] + u["seconds"]
    ok = a and b and c and runtime < 900
    record(7, ok,
           f"(a) V/t: {at(V, 50):.4f}@50 {at(V, 100):.4f}@100 {at(V, T):.4f}@500, ratio "
           f"{at(V, T) / at(V, 50):.3f} (need <= 0.5), {len(ups)} increases after t=100 -> {a}; "
           f"(b) R/t {at(R, 100):.4f}@100 {at(R, T):.4f}@500 -> {b}; "
           f"(c) V/T {at(V, T):.4f} vs unconstrained {at(u['avg_violation'], T):.4f} -> {c}; "
           f"runtime {runtime:.0f}s")
    assert ok


def test_criterion_8_delayed_trend(experiments):
    e = experiments["delayed"]
    V, R = e["avg_violation"], e["avg_regret"]
    finite = bool(np.all(np.isfinite(V)) and np.all(np.isfinite(R)))
    ups_v, ups_r = non_increasing(V, T // 2, T), non_increasing(R, T // 2, T)
    ratio = at(V, T) / at(V, 100)
    ok = finite and not ups_v and not ups_r and ratio <= 0.6
    record(8, ok, f"V/t {at(V, 100):.4f}@100 {at(V, T):.4f}@500 ratio {ratio:.3f} (need <= 0.6); "
                  f"increases over last half: V/t {len(ups_v)}, R/t {len(ups_r)}; finite {finite}")
    assert ok


def test_criterion_9_nonstationary_trend(experiments):
    sw, full = experiments["nonstationary-sw"], experiments["nonstationary-full"]
    r_sw = float(np.mean(sw["f_true"][400:500]))
    r_full = float(np.mean(full["f_true"][400:500]))
    V = sw["avg_violation"]
    ups = non_increasing(V, 350, T)
    a = r_sw > r_full
    b = not ups and at(V, T) < at(V, 350)
    record(9, a and b, f"(a) mean f over rounds 401-500: sliding window {r_sw:.4f} vs full "
                       f"history {r_full:.4f} -> {a}; (b) V/t {at(V, 350):.4f}@350 "
                       f"{at(V, T):.4f}@500, {len(ups)} increases -> {b}")
    assert a and b


# ----------------------------------------------------------------------
# 6. replay bounds on every stored experiment trace
# ----------------------------------------------------------------------
def test_criterion_6_width_replay(experiments):
    failures, n = [], 0
    for name, e in experiments.items():
        for tr in e["traces"]:
            for check in verify_trace(tr, e["cfg"]).checks:
                if check.name == "penalty":
                    continue
                n += 1
                if not check.passed:
                    failures.append(f"{name} seed {tr.meta['seed']}: {check.line()}")
    record(6, not failures and n > 0, f"{n} bound checks, {len(failures)} failed"
           + (f"; first: {failures[0]}" if failures else ""))
    assert not failures


# ----------------------------------------------------------------------
# 10. determinism through the CLI
# ----------------------------------------------------------------------
def test_criterion_10_determinism(tmp_path):
    args = ["run", "--environment", "scbwc-delayed", "--variant", "rpol-censored-ucb",
            "--T", "60", "--seed", "13"]
    assert cli_main(args + ["--output-dir", str(tmp_path / "a")]) == 0
    assert cli_main(args + ["--output-dir", str(tmp_path / "b")]) == 0
    a = next((tmp_path / "a").rglob("trace.csv")).read_bytes()
    b = next((tmp_path / "b").rglob("trace.csv")).read_bytes()
    record(10, a == b, f"two runs, trace files {'bit-identical' if a == b else 'differ'}")
    assert a == b


# ----------------------------------------------------------------------
# 3. penalty invariants (every trace so far; the conftest hook checks each one as produced)
# ----------------------------------------------------------------------
def test_criterion_3_penalty_invariants(experiments):
    n, bad = PENALTY_LOG["traces"], PENALTY_LOG["violations"]
    record(3, n > 0 and not bad, f"{n} RPOL traces checked, {len(bad)} violations")
    assert n > 0 and not bad
