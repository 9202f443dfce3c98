"""Command-line entry point: ``thompson-mdp {flu,mallard,regret-curve,radius}``."""
from __future__ import annotations

import argparse
import logging
import sys

from .experiments.runner import ExperimentConfig, summary_path, write_rows

log = logging.getLogger("thompson_mdp")


def _load(args, kind: str) -> ExperimentConfig:
    if args.config:
        cfg = ExperimentConfig.load(args.config)
        if cfg.kind != kind:
            raise SystemExit(f"config is for {cfg.kind!r}, not {kind!r}")
    else:
        cfg = ExperimentConfig(kind=kind)
    if args.seed is not None:
        cfg.master_seed = args.seed
    if args.reps is not None:
        cfg.replications = args.reps
    if args.threads is not None:
        cfg.threads = args.threads
    if args.out is not None:
        cfg.output = args.out
    ExperimentConfig.from_dict(vars(cfg))  # re-validate after overrides
    return cfg


def _emit(cfg: ExperimentConfig, rows, summary) -> None:
    if cfg.output:
        write_rows(cfg.output, rows)
        write_rows(summary_path(cfg.output), summary)
        log.info("wrote %s and %s", cfg.output, summary_path(cfg.output))
    if summary:
        cols = list(summary[0])
        print(",".join(cols))
        for r in summary:
            print(",".join(str(r[c]) for c in cols))


def run_flu(cfg: ExperimentConfig) -> int:
    from .experiments.flu_exp import flu_experiment
    rows, summary, failures = flu_experiment(cfg)
    keep = [{k: r[k] for k in ("network", "L", "T", "strategy", "n", "ever_infected", "infected_now",
                               "ever_infected_mean", "ever_infected_se", "infected_now_mean", "infected_now_se")}
            for r in summary]
    _emit(cfg, rows, keep)
    return 2 if failures else 0


def run_mallard(cfg: ExperimentConfig) -> int:
    from .experiments.mallard_exp import mallard_experiment, trajectory_rows
    rows, summary, failures = mallard_experiment(cfg)
    if cfg.options.get("trajectories") and cfg.output:
        write_rows(cfg.output.rsplit(".", 1)[0] + "_years.csv", trajectory_rows(rows))
        rows = [{k: v for k, v in r.items() if k != "trajectory"} for r in rows]
    _emit(cfg, rows, summary)
    return 2 if failures else 0


def run_regret(cfg: ExperimentConfig) -> int:
    from .experiments.regret import regret_curve
    curve = regret_curve(cfg)
    per_seed = [{"seed": i, "t": int(t), "regret": float(curve.per_seed[i, j])}
                for i in range(curve.per_seed.shape[0]) for j, t in enumerate(curve.grid)]
    _emit(cfg, per_seed, curve.rows())
    return 0


def run_radius(cfg: ExperimentConfig) -> int:
    from .experiments.regret import radius_experiment
    res = radius_experiment(cfg)
    _emit(cfg, res.rows(), [{"radius": res.radius, "delta": cfg.options.get("delta", 0.01)}])
    return 0


RUNNERS = {"flu": run_flu, "mallard": run_mallard, "regret-curve": run_regret, "radius": run_radius}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="thompson-mdp", description="Approximate Thompson sampling experiments")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name in RUNNERS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="experiment config (JSON)")
        sp.add_argument("--seed", type=int, help="master seed (overrides the config)")
        sp.add_argument("--reps", type=int, help="number of replications")
        sp.add_argument("--out", help="per-replicate CSV; the summary goes to <out>_summary.csv")
        sp.add_argument("--threads", type=int, help="worker processes for replications")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    cfg = _load(args, args.command)
    return RUNNERS[args.command](cfg)


if __name__ == "__main__":
    sys.exit(main())
