"""Regret of the selected policy as the history grows, and the worst-case
regret radius around the true parameter."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..core import History
from ..engine import EngineConfig, ThompsonSampler, draw_perturbed_parameters, truncation_horizon
from ..envs.synthetic import SignalChainModel, TabularModel
from ..policy_eval import FinitePolicyClass, estimate_value, optimize_policy
from ..rng import child_seed, stream, tag
from .runner import ExperimentConfig, mean_se

REGRET_ENGINE_DEFAULTS = dict(gamma=0.9, rollouts_per_eval=64, min_fit_epochs=5, ridge=0.0, exact_values=True)


@dataclass
class RegretOptions:
    grid: tuple = (64, 128, 256, 512, 1024)
    mu: float = 0.06             # signal mean; the per-step gap is 2 Phi(mu / sigma) - 1
    sigma: float = 1.0
    theta_init: float = 0.0
    draws: int = 200             # parameter draws per checkpoint for the conditional regret
    oracle_rollouts: int = 10_000
    value_horizon: int = 100
    oracle: bool = False         # replace the engine by the optimal policy

    @classmethod
    def from_dict(cls, d: dict) -> "RegretOptions":
        d = dict(d)
        if "grid" in d:
            d["grid"] = tuple(int(t) for t in d["grid"])
        return cls(**d)


@dataclass
class RegretCurve:
    grid: np.ndarray
    mean: np.ndarray
    standard_error: np.ndarray
    median: np.ndarray
    per_seed: np.ndarray                  # (seeds, len(grid))
    slope: float | None
    intercept: float | None
    degenerate: bool
    oracle_values: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def rows(self) -> list[dict]:
        return [{"t": int(t), "mean_regret": float(m), "se": float(s), "median_regret": float(md),
                 "slope": self.slope, "degenerate": self.degenerate}
                for t, m, s, md in zip(self.grid, self.mean, self.standard_error, self.median)]


def fit_loglog_slope(grid, regret) -> tuple[float | None, float | None, bool]:
    """Least-squares fit of ``log regret = a + b log t``.

    Returns ``(b, a, degenerate)``. The curve is degenerate when some regret
    is not positive, since the fit is then undefined.
    """
    r = np.asarray(regret, dtype=float)
    if np.any(~(r > 0)):
        return None, None, True
    b, a = np.polyfit(np.log(np.asarray(grid, dtype=float)), np.log(r), 1)
    return float(b), float(a), False


def oracle_values(model, theta, policies, horizon, gamma, n, rng) -> np.ndarray:
    seed = child_seed(rng)
    return np.array([estimate_value(model, theta, p, horizon, 0.0, n, gamma, stream(seed, 0)).mean
                     for p in policies])


def regret_seed(config: ExperimentConfig, seed_index: int, opts: RegretOptions, values: np.ndarray) -> np.ndarray:
    """Conditional expected regret at each checkpoint for one data stream.

    At checkpoint ``t`` the engine has seen ``t - 1`` transitions. The
    expectation over the parameter draw and the rollout noise of the search
    is estimated with ``opts.draws`` independent repetitions of that epoch's
    selection step, so per-seed values vary smoothly with the data. By default
    candidate policies are compared on closed-form values
    (``exact_values=True``); setting it to false uses rollouts instead.
    """
    model = SignalChainModel(sigma=opts.sigma)
    pc = FinitePolicyClass(model.policies(), ["0", "1"])
    ekw = dict(REGRET_ENGINE_DEFAULTS)
    ekw.update(config.engine)
    cfg = EngineConfig(**{**ekw, "master_seed": config.master_seed})
    best = int(np.argmax(values))
    regret_of = values[best] - values
    if opts.oracle:
        return np.zeros(len(opts.grid))

    sampler = ThompsonSampler(model, pc, cfg, np.array([opts.theta_init]))
    env_rng = stream(config.master_seed, seed_index, tag("environment"))
    run_rng = stream(config.master_seed, seed_index, tag("engine"))
    check_rng = stream(config.master_seed, seed_index, tag("checkpoint"))
    history = History()
    state = 0.0
    out = np.empty(len(opts.grid))
    checkpoints = {t: i for i, t in enumerate(opts.grid)}
    search = cfg.search_config()
    for t in range(1, max(opts.grid) + 1):
        policy, diag = sampler.choose(state, history, run_rng)
        if t in checkpoints:
            if sampler.posterior is None:
                draws = [np.array([opts.theta_init])] * opts.draws
            else:
                post = sampler.posterior
                draws = [draw_perturbed_parameters(post, check_rng) for _ in range(opts.draws)]
            h = truncation_horizon(t, cfg.gamma)
            picks = [optimize_policy(model, th, pc, h, search, check_rng, state).index for th in draws]
            out[checkpoints[t]] = float(np.mean(regret_of[picks]))
        action = policy.act(state)
        x = opts.sigma * env_rng.standard_normal() + opts.mu
        history.append(state, action, model.utility(action, x))
        state = x
    return out


def regret_curve(config: ExperimentConfig) -> RegretCurve:
    """Regret against the oracle over ``opts.grid``, one data stream per
    replicate (each stream is observed at every grid point)."""
    opts = RegretOptions.from_dict(config.options)
    model = SignalChainModel(sigma=opts.sigma)
    gamma = config.engine.get("gamma", REGRET_ENGINE_DEFAULTS["gamma"])
    vals = oracle_values(model, np.array([opts.mu]), model.policies(), opts.value_horizon, gamma,
                         opts.oracle_rollouts, stream(config.master_seed, tag("oracle")))
    per_seed = np.array([regret_seed(config, i, opts, vals) for i in range(config.replications)])
    grid = np.asarray(opts.grid)
    stats = [mean_se(per_seed[:, j]) for j in range(grid.size)]
    mean = np.array([m for m, _ in stats])
    se = np.array([s for _, s in stats])
    median = np.median(per_seed, axis=0)
    slope, intercept, degenerate = fit_loglog_slope(grid, mean)
    if np.all(mean == 0):
        degenerate = True
    return RegretCurve(grid, mean, se, median, per_seed, slope, intercept, degenerate, vals)


# radius ------------------------------------------------------------------------

def sphere_directions(q: int, n: int, rng: np.random.Generator | None = None) -> np.ndarray:
    """Unit vectors: both signs for q=1, evenly spaced angles for q=2,
    normalized Gaussian draws otherwise."""
    if q == 1:
        return np.array([[1.0], [-1.0]])
    if q == 2:
        ang = 2.0 * math.pi * np.arange(n) / n
        return np.column_stack([np.cos(ang), np.sin(ang)])
    if rng is None:
        raise ValueError("random directions need an rng")
    z = rng.standard_normal((n, q))
    return z / np.linalg.norm(z, axis=1, keepdims=True)


def _argmax_lowest(values) -> int:
    values = np.asarray(values)
    return int(np.flatnonzero(values == values.max())[0])


@dataclass
class RadiusResult:
    radius: float
    grid: np.ndarray
    worst_regret: np.ndarray        # worst regret over the ball of each radius

    def rows(self) -> list[dict]:
        return [{"epsilon": float(e), "worst_regret": float(w), "radius": self.radius}
                for e, w in zip(self.grid, self.worst_regret)]


def regret_radius(model, theta_star, delta: float, policies, eps_grid, horizon: int, gamma: float, start=0.0,
                  n_directions: int = 64, rng: np.random.Generator | None = None) -> RadiusResult:
    """Largest grid radius whose parameter ball keeps the worst-case regret
    at most ``delta``.

    Values come from ``model.exact_value``. For each radius the sphere is
    probed along ``n_directions`` unit vectors. The worst regret over the
    ball is the running maximum over the sphere radii up to that one.
    """
    theta_star = np.atleast_1d(np.asarray(theta_star, dtype=float))
    eps_grid = np.sort(np.asarray(eps_grid, dtype=float))
    v_star = np.array([model.exact_value(theta_star, p, horizon, gamma, start) for p in policies])
    v_opt = v_star[_argmax_lowest(v_star)]
    dirs = sphere_directions(theta_star.size, n_directions, rng)
    sphere = np.empty(eps_grid.size)
    for i, eps in enumerate(eps_grid):
        worst = 0.0
        for u in dirs:
            th = theta_star + eps * u
            pick = _argmax_lowest([model.exact_value(th, p, horizon, gamma, start) for p in policies])
            worst = max(worst, v_opt - v_star[pick])
        sphere[i] = worst
    ball = np.maximum.accumulate(sphere)
    ok = np.flatnonzero(ball <= delta)   # a prefix of the grid, since ``ball`` is nondecreasing
    radius = float(eps_grid[ok[-1]]) if ok.size else 0.0
    return RadiusResult(radius, eps_grid, ball)


@dataclass
class RadiusOptions:
    instance: str = "signal"            # "signal" or "flat" (all utilities equal)
    mu: float = 0.3
    log_sigma: float = 0.0
    delta: float = 0.01
    eps_max: float = 1.0
    eps_steps: int = 101
    horizon: int = 20
    gamma: float = 0.9
    directions: int = 64

    @classmethod
    def from_dict(cls, d: dict) -> "RadiusOptions":
        return cls(**d)


def radius_experiment(config: ExperimentConfig) -> RadiusResult:
    opts = RadiusOptions.from_dict(config.options)
    grid = np.linspace(0.0, opts.eps_max, opts.eps_steps)
    rng = stream(config.master_seed, tag("radius"))
    if opts.instance == "signal":
        model = SignalChainModel()
        theta = np.array([opts.mu, opts.log_sigma])
    elif opts.instance == "flat":
        model = TabularModel(np.zeros((2, 2, 2)))
        theta = np.zeros(4)
    else:
        raise ValueError(f"unknown radius instance {opts.instance!r}")
    return regret_radius(model, theta, opts.delta, model.policies(), grid, opts.horizon, opts.gamma, 0,
                         opts.directions, rng)
