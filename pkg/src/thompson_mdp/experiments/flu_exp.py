"""Proportion infected after T days under no treatment, myopic treatment
and Thompson sampling over the priority-score policy class."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ..baselines import MyopicPolicy, NoTreatmentPolicy
from ..core import History
from ..engine import EngineConfig, ThompsonSampler
from ..estimation import MLEstimator
from ..envs import flu as fl
from ..rng import child_seed, stream, tag
from .runner import ExperimentConfig, aggregate, run_replications

log = logging.getLogger(__name__)

STRATEGIES = ("no_treatment", "myopic", "thompson")

# engine settings sized for a single core (see README)
FLU_ENGINE_DEFAULTS = dict(gamma=0.75, rollouts_per_eval=16, policy_search_budget=30, restarts=1,
                           search_max_iter=200, min_fit_epochs=5, ridge=0.5, ridge_center="warm-start")


@dataclass
class FluOptions:
    networks: tuple = ("ER", "BA")
    days: tuple = (10, 20)
    strategies: tuple = STRATEGIES
    prior_sd: float = 0.25          # spread of the warm-start draw around the true parameter
    initial_eta: tuple = (0.0, 1.0, 0.0, 0.0, 1.0)
    refit_myopic: bool = True

    @classmethod
    def from_dict(cls, d: dict) -> "FluOptions":
        d = dict(d)
        for k in ("networks", "days", "strategies", "initial_eta"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)


def _engine_config(config: ExperimentConfig) -> EngineConfig:
    kw = dict(FLU_ENGINE_DEFAULTS)
    kw.update(config.engine)
    kw["master_seed"] = config.master_seed
    return EngineConfig(**kw)


def run_strategy(strategy: str, model: fl.FluModel, start: fl.FluState, theta_true: np.ndarray,
                 theta_init: np.ndarray, flu_cfg: fl.FluConfig, opts: FluOptions, engine_cfg: EngineConfig,
                 dyn_seed: int, policy_seed: int, days: int) -> list[fl.FluState]:
    """Simulate ``days`` days and return the visited states.

    The dynamics draw day ``d`` from ``stream(dyn_seed, d)`` whatever the
    strategy, so strategies are compared under common random numbers.
    """
    M = flu_cfg.budget
    pop = model.pop
    history = History()
    states = [start]
    s = start
    sampler = estimator = None
    if strategy == "thompson":
        pc = fl.PriorityPolicyClass(model, M, initial=np.asarray(opts.initial_eta, dtype=float))
        sampler = ThompsonSampler(model, pc, engine_cfg, theta_init)
    elif strategy == "myopic":
        center = theta_init if engine_cfg.ridge_center == "warm-start" else None
        estimator = MLEstimator(ridge=engine_cfg.ridge, center=center)
        theta_hat = np.asarray(theta_init, dtype=float)
    elif strategy != "no_treatment":
        raise ValueError(f"unknown strategy {strategy!r}")
    for d in range(days):
        prng = stream(policy_seed, d)
        if strategy == "no_treatment":
            action = NoTreatmentPolicy(pop.L).act(s, prng)
        elif strategy == "myopic":
            if opts.refit_myopic and len(history) >= engine_cfg.min_fit_epochs:
                try:
                    theta_hat = estimator.fit(history, model, theta_init, next_state=s).theta_hat
                except Exception as exc:
                    log.warning("myopic refit failed on day %d: %s", d, exc)
            action = MyopicPolicy(pop, model.params_from(theta_hat), M).act(s, prng)
        else:
            policy, _ = sampler.choose(s, history, prng)
            action = policy.act(s, stream(policy_seed, d, tag("act")))
        nxt, u, _ = model.step(s, action, theta_true, stream(dyn_seed, d))
        history.append(s, action, u)
        states.append(nxt)
        s = nxt
    return states


def flu_replicate(config: ExperimentConfig, rep: int) -> list[dict]:
    flu_cfg = fl.FluConfig.from_dict(config.environment)
    opts = FluOptions.from_dict(config.options)
    engine_cfg = _engine_config(config)
    horizon = max(opts.days)
    rows = []
    for kind in opts.networks:
        cfg = fl.FluConfig.from_dict({**flu_cfg.to_dict(), "network": kind})
        env_rng = stream(config.master_seed, rep, tag(kind), tag("environment"))
        model, start, theta_true = fl.build_environment(cfg, env_rng)
        prior_rng = stream(config.master_seed, rep, tag(kind), tag("prior"))
        theta_init = theta_true + opts.prior_sd * prior_rng.standard_normal(theta_true.size)
        dyn_seed = child_seed(stream(config.master_seed, rep, tag(kind), tag("dynamics")))
        for strategy in opts.strategies:
            pol_seed = child_seed(stream(config.master_seed, rep, tag(kind), tag(strategy)))
            states = run_strategy(strategy, model, start, theta_true, theta_init, cfg, opts, engine_cfg,
                                  dyn_seed, pol_seed, horizon)
            for T in opts.days:
                rows.append({"network": kind, "L": cfg.L, "strategy": strategy, "T": T,
                             "infected_now": fl.infected_now(states[T]),
                             "ever_infected": fl.ever_infected(states[T])})
    return rows


def flu_experiment(config: ExperimentConfig):
    """Returns ``(per-replicate rows, summary rows, failures)``."""
    res = run_replications(config, flu_replicate)
    summary = aggregate(res.rows, ["network", "L", "T", "strategy"], ["ever_infected", "infected_now"])
    return res.rows, summary, res.failures


def paired_differences(rows: list[dict], network: str, T: int, a: str, b: str, column: str = "ever_infected"):
    """Per-replicate ``a - b`` for one table cell."""
    by = {}
    for r in rows:
        if r["network"] == network and r["T"] == T and r["strategy"] in (a, b):
            by.setdefault(r["replicate"], {})[r["strategy"]] = r[column]
    reps = sorted(k for k, v in by.items() if a in v and b in v)
    return np.array([by[k][a] - by[k][b] for k in reps])
