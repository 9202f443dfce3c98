"""Total 15-year harvest under fixed practices, fitted value iteration and
Thompson sampling over the four practices."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..baselines import RbfConfig, fixed_practice_policy, mallard_dp_policy
from ..core import History
from ..engine import EngineConfig, ThompsonSampler
from ..envs.mallard import PRACTICES, MallardConfig, MallardModel, MallardState, simulate_history
from ..policy_eval import FinitePolicyClass
from ..rng import child_seed, stream, tag
from .runner import ExperimentConfig, aggregate, run_replications

STRATEGIES = PRACTICES + ("dp", "thompson")

MALLARD_ENGINE_DEFAULTS = dict(gamma=0.9, rollouts_per_eval=256, ridge=0.0, min_fit_epochs=5)


@dataclass
class MallardOptions:
    sizes: tuple = (6.0, 8.0, 13.0)
    strategies: tuple = STRATEGIES
    theta_init: tuple = (1.0, 0.5)       # only the optimizer's starting point; history is long enough to fit
    dp_plan_under: str = "true"          # "true" plans under the true betas, "estimate" under the historical fit
    trajectories: bool = False

    @classmethod
    def from_dict(cls, d: dict) -> "MallardOptions":
        d = dict(d)
        for k in ("sizes", "strategies", "theta_init"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)


def mallard_config(d: dict) -> MallardConfig:
    d = dict(d)
    for k in ("split", "beta", "historical_actions"):
        if k in d:
            d[k] = tuple(d[k])
    for k in ("survival", "harvest"):
        if d.get(k) is not None:
            d[k] = tuple(map(tuple, d[k]))
    return MallardConfig(**d)


def management_start(config: MallardConfig, size: float, ponds: float, year: int) -> MallardState:
    split = np.asarray(config.split, dtype=float)
    pops = size * split / split.sum()
    return MallardState(*map(float, pops), float(ponds), year)


def run_management(policy_or_sampler, model: MallardModel, start: MallardState, history: History,
                   years: int, dyn_seed: int, policy_seed: int, theta_true):
    """Manage for ``years`` years. Returns yearly rows.

    ``policy_or_sampler`` is a policy, or a :class:`ThompsonSampler` that
    picks a policy each year from the history so far.
    """
    rows = []
    s = start
    hist = history.copy()
    for k in range(years):
        prng = stream(policy_seed, k)
        if isinstance(policy_or_sampler, ThompsonSampler):
            policy, _ = policy_or_sampler.choose(s, hist, prng)
        else:
            policy = policy_or_sampler
        a = int(policy.act(s, prng))
        nxt, u, h = model.step(s, a, theta_true, stream(dyn_seed, k))
        rows.append({"year": k + 1, "n_am": s.n_am, "n_af": s.n_af, "n_ym": s.n_ym, "n_yf": s.n_yf,
                     "ponds": s.ponds, "reproduction": s.reproduction, "action": PRACTICES[a], "harvest": h})
        hist.append(s, a, u)
        s = nxt
    return rows


def mallard_replicate(config: ExperimentConfig, rep: int) -> list[dict]:
    mcfg = mallard_config(config.environment)
    opts = MallardOptions.from_dict(config.options)
    ekw = dict(MALLARD_ENGINE_DEFAULTS, gamma=mcfg.gamma, rollouts_per_eval=mcfg.rollouts)
    ekw.update(config.engine)
    engine_cfg = EngineConfig(**{**ekw, "master_seed": config.master_seed})
    model = MallardModel(mcfg.parameters())
    theta_true = np.asarray(mcfg.beta, dtype=float)

    hist, end_state, _ = simulate_history(model, mcfg, stream(config.master_seed, rep, tag("history")))
    hist = hist.copy().mark_gap()   # management restarts at a chosen population
    dyn_seed = child_seed(stream(config.master_seed, rep, tag("dynamics")))

    dp_policy = None
    if "dp" in opts.strategies:
        if opts.dp_plan_under == "true":
            plan_theta = theta_true
        else:
            from ..estimation import fit_mle
            plan_theta = fit_mle(hist, model, np.asarray(opts.theta_init), 0.0, next_state=end_state).theta_hat
        # planning under the true betas gives the same policy in every replicate
        dp_seed = stream(config.master_seed, tag("dp")) if opts.dp_plan_under == "true" else \
            stream(config.master_seed, rep, tag("dp"))
        _, dp_policy = mallard_dp_policy(model, plan_theta, mcfg.gamma, dp_seed, RbfConfig(), mcfg.split)

    rows = []
    for size in opts.sizes:
        start = management_start(mcfg, size, end_state.ponds, end_state.year)
        for strategy in opts.strategies:
            pol_seed = child_seed(stream(config.master_seed, rep, tag(strategy), tag(repr(float(size)))))
            if strategy in PRACTICES:
                agent = fixed_practice_policy(strategy)
            elif strategy == "dp":
                agent = dp_policy
            elif strategy == "thompson":
                pc = FinitePolicyClass([fixed_practice_policy(p) for p in PRACTICES], list(PRACTICES))
                agent = ThompsonSampler(model, pc, engine_cfg, np.asarray(opts.theta_init, dtype=float))
            else:
                raise ValueError(f"unknown strategy {strategy!r}")
            years = run_management(agent, model, start, hist, mcfg.horizon, dyn_seed, pol_seed, theta_true)
            total = float(sum(r["harvest"] for r in years))
            row = {"initial_size": float(size), "strategy": strategy, "total_harvest": total,
                   "liberal_years": sum(r["action"] == "liberal" for r in years)}
            if opts.trajectories:
                row["trajectory"] = years
            rows.append(row)
    return rows


def mallard_experiment(config: ExperimentConfig):
    """Returns ``(per-replicate rows, summary rows, failures)``."""
    res = run_replications(config, mallard_replicate)
    summary = aggregate(res.rows, ["initial_size", "strategy"], ["total_harvest"], digits=2)
    return res.rows, summary, res.failures


def trajectory_rows(rows: list[dict]) -> list[dict]:
    """Flatten per-year trajectories (year, populations, ponds, R, action, harvest)."""
    out = []
    for r in rows:
        for y in r.get("trajectory", ()):
            out.append({"replicate": r["replicate"], "initial_size": r["initial_size"], "strategy": r["strategy"], **y})
    return out
