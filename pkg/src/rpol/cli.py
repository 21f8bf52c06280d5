"""Command-line entry point: ``rpol run|sweep|oracle|verify|repro``.

Exit codes: 0 ok, 1 configuration error, 2 runtime error, 3 verification failure.
Output goes under ``$RPOL_OUTPUT_ROOT`` (default ``./runs``) unless
``--output-dir`` is given.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import os
import sys
from pathlib import Path

from .config import KEYS, ConfigError, ExperimentConfig, load_config, parse_config, save_config

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_VERIFY = 0, 1, 2, 3

LIST_KEYS = ("seeds", "variation_f", "variation_g")

# the three synthetic experiments; everything else stays at the documented defaults
REPRO_EXPERIMENTS = {
    "stationary": {"environment": "scbwc", "variant": "rpol-ucb", "T": 500},
    "delayed": {"environment": "scbwc-delayed", "variant": "rpol-censored-ucb", "T": 500,
                "m": 25, "delay": "poisson", "delay_mean": 15.0},
    "nonstationary": {"environment": "scbwc-nonstationary", "variant": "rpol-sw-ucb", "T": 500},
}


def output_root() -> Path:
    return Path(os.environ.get("RPOL_OUTPUT_ROOT", "runs"))


def _add_config_flags(p: argparse.ArgumentParser):
    p.add_argument("--config", help="YAML or JSON config file")
    for key in KEYS:
        flag = "--" + key.replace("_", "-")
        if key in LIST_KEYS:
            p.add_argument(flag, dest=key, nargs="+", default=None)
        elif key == "practical":
            p.add_argument(flag, dest=key, action="store_true", default=None)
        else:
            p.add_argument(flag, dest=key, default=None)
    p.add_argument("--seed", dest="seed", default=None, help="shorthand for a single seed")


def _config_from_args(args) -> ExperimentConfig:
    overrides = {k: getattr(args, k) for k in KEYS if getattr(args, k, None) is not None}
    if getattr(args, "seed", None) is not None:
        overrides["seeds"] = [args.seed]
    source = None
    if args.config:
        source = args.config
    return parse_config(source, **overrides)


def _run_dir(cfg: ExperimentConfig, seed: int, base: Path | None = None) -> Path:
    base = base if base is not None else (Path(cfg.output_dir) if cfg.output_dir else output_root())
    return base / f"{cfg.environment}_{cfg.variant}_{cfg.config_hash()}_seed{seed}"


def write_metrics(ms, path: Path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "regret", "violation", "soft_violation",
                    "avg_regret", "avg_violation", "avg_soft_violation"])
        for i in range(len(ms.regret)):
            w.writerow([i + 1] + [repr(float(a[i])) for a in (
                ms.regret, ms.violation, ms.soft_violation,
                ms.avg_regret, ms.avg_violation, ms.avg_soft_violation)])


def save_run(cfg: ExperimentConfig, trace, run_dir: Path, oracle) -> Path:
    from .harness import metrics

    run_dir.mkdir(parents=True, exist_ok=True)
    single = dataclasses.replace(cfg, seeds=[trace.meta["seed"]])
    save_config(single, run_dir / "config.yaml")
    trace.to_csv(run_dir / "trace.csv")
    write_metrics(metrics(trace, oracle), run_dir / "metrics.csv")
    return run_dir


def cmd_run(args) -> int:
    from .harness import oracle_series, run

    cfg = _config_from_args(args)
    oracle = oracle_series(cfg.environment, cfg.T, cfg.oracle_grid)
    for seed in cfg.seeds:
        trace = run(cfg, seed)
        d = save_run(cfg, trace, _run_dir(cfg, seed), oracle)
        print(d)
    return EXIT_OK


def _sweep(cfg: ExperimentConfig, workers: int, base: Path) -> Path:
    from .harness import aggregate, oracle_series, run_seeds

    oracle = oracle_series(cfg.environment, cfg.T, cfg.oracle_grid)
    traces = run_seeds(cfg, workers=workers)
    sweep_dir = base / f"{cfg.environment}_{cfg.variant}_{cfg.config_hash()}"
    sweep_dir.mkdir(parents=True, exist_ok=True)
    save_config(cfg, sweep_dir / "config.yaml")
    for tr in traces:
        save_run(cfg, tr, sweep_dir / f"seed{tr.meta['seed']}", oracle)
    aggregate(traces, oracle).to_csv(sweep_dir / "summary.csv")
    return sweep_dir


def cmd_sweep(args) -> int:
    cfg = _config_from_args(args)
    if args.n_seeds:
        cfg = dataclasses.replace(cfg, seeds=list(range(1, int(args.n_seeds) + 1)))
    base = Path(cfg.output_dir) if cfg.output_dir else output_root()
    print(_sweep(cfg, int(args.workers), base) / "summary.csv")
    return EXIT_OK


def cmd_oracle(args) -> int:
    from .environments import REGISTRY
    from .harness import oracle_fixture

    if args.environment not in REGISTRY:
        raise ConfigError(f"environment: unknown {args.environment!r}; registry: {', '.join(REGISTRY)}")
    fixture = oracle_fixture(args.environment, int(args.resolution))
    out = Path(args.out) if args.out else output_root() / f"oracle_{args.environment}.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(fixture, indent=2) + "\n")
    print(out)
    return EXIT_OK


def _trace_dirs(paths):
    for p in map(Path, paths):
        if (p / "trace.csv").exists():
            yield p
        elif p.is_dir():
            yield from sorted(q.parent for q in p.rglob("trace.csv"))
        else:
            raise ConfigError(f"no trace.csv under {p}")


def cmd_verify(args) -> int:
    from .harness import Trace
    from .verify import verify_trace

    ok = True
    for d in _trace_dirs(args.paths):
        cfg = load_config(d / "config.yaml")
        trace = Trace.from_csv(d / "trace.csv", meta={"seed": cfg.seed, "variant": cfg.variant})
        report = verify_trace(trace, cfg)
        print(d)
        for line in report.lines():
            print("  " + line)
        ok &= report.passed
    return EXIT_OK if ok else EXIT_VERIFY


def cmd_repro(args) -> int:
    base = Path(args.output_dir) if args.output_dir else output_root() / "repro"
    base.mkdir(parents=True, exist_ok=True)
    seeds = list(range(1, int(args.n_seeds) + 1))
    for name, spec in REPRO_EXPERIMENTS.items():
        cfg = parse_config(dict(spec, seeds=seeds, **({"T": int(args.T)} if args.T else {})))
        save_config(cfg, base / f"{name}.yaml")
        sweep_dir = _sweep(cfg, int(args.workers), base / name)
        summary = base / f"{name}_summary.csv"
        summary.write_text((sweep_dir / "summary.csv").read_text())
        print(summary)
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    # malformed flags are configuration errors, not runtime errors
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="rpol", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("run", help="run one config for each of its seeds")
    _add_config_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="run a config over seeds and aggregate")
    _add_config_flags(p)
    p.add_argument("--n-seeds", dest="n_seeds", default=None, help="use seeds 1..N")
    p.add_argument("--workers", default=1)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("oracle", help="write the constrained optimum fixture of an environment")
    p.add_argument("environment")
    p.add_argument("--resolution", default=1000)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("verify", help="replay invariant and width-bound checks on stored runs")
    p.add_argument("paths", nargs="+")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("repro", help="write and run the three synthetic experiment configs")
    p.add_argument("--n-seeds", dest="n_seeds", default=20)
    p.add_argument("--T", dest="T", default=None)
    p.add_argument("--workers", default=1)
    p.add_argument("--output-dir", dest="output_dir", default=None)
    p.set_defaults(func=cmd_repro)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # --help or a malformed command line
        return int(exc.code or 0)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - surfaced as a runtime failure
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
