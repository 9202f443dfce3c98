"""Comparator strategies: no treatment, myopic treatment, fixed harvest
practices and fitted value iteration with radial basis functions."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .envs import flu as fl
from .envs.mallard import FixedPracticePolicy, MallardModel, MallardState, PRACTICES, deterministic_update, harvest


class DivergenceError(RuntimeError):
    """Fitted value iteration kept moving further from a fixed point."""


# flu -------------------------------------------------------------------------

class NoTreatmentPolicy:
    def __init__(self, L: int | None = None):
        self.L = L

    def act(self, state, rng=None) -> np.ndarray:
        return np.zeros(state.L if self.L is None else self.L, dtype=np.int8)

    def act_batch(self, states, rng=None):
        status = states[0]
        return np.zeros(np.shape(status), dtype=np.int8)


def no_treatment_policy(L: int | None = None) -> NoTreatmentPolicy:
    return NoTreatmentPolicy(L)


def next_day_infection_probability(pop: fl.FluPopulation, status, susc, day: int,
                                   params: fl.FluParameters) -> np.ndarray:
    """(R, L) probability that each susceptible agent is infected tomorrow
    without treatment, averaged analytically over attendance. Other agents
    get 0."""
    status = np.atleast_2d(status)
    susc = np.atleast_2d(susc)
    R, L = status.shape
    w = fl.contact_weights(pop, status, day, params)
    su, sv = status[:, pop.eu], status[:, pop.ev]
    u_sus = (su == fl.SUSCEPTIBLE) & (sv == fl.INFECTED)
    v_sus = (sv == fl.SUSCEPTIBLE) & (su == fl.INFECTED)
    r, e = np.nonzero(u_sus | v_sus)
    sus = np.where(u_sus[r, e], pop.eu[e], pop.ev[e])
    out = np.zeros(R * L)
    if r.size:
        zeros = np.zeros((R, L))
        X = np.column_stack([np.ones(r.size), pop.age[sus], susc[r, sus], zeros[r, sus], zeros[r, sus],
                             zeros[r, sus], pop.age_gap2[e]])
        q = w[r, e] * params.p_c * fl.expit(X @ params.vartheta)
        out += np.bincount(r * L + sus, weights=np.log1p(-q), minlength=R * L)
    return -np.expm1(out).reshape(R, L)


class MyopicPolicy:
    """Treat the ``budget`` susceptible agents most likely to be infected
    tomorrow under ``params``. Ties, including the all-zero case, are broken
    at random. Non-susceptible agents rank last, so exactly ``budget`` agents
    are always treated."""

    def __init__(self, pop: fl.FluPopulation, params: fl.FluParameters, budget: int):
        self.pop = pop
        self.params = params
        self.budget = int(budget)

    def scores(self, status, susc, day):
        p = next_day_infection_probability(self.pop, status, susc, day, self.params)
        return np.where(np.atleast_2d(status) == fl.SUSCEPTIBLE, p, -1.0)

    def act_batch(self, states, rng):
        status, susc, day = states
        return fl.top_m(self.scores(status, susc, day), self.budget, rng)

    def act(self, state, rng):
        return self.act_batch((state.status[None], state.susceptibility[None], state.day), rng)[0]


def myopic_policy(theta_hat, pop: fl.FluPopulation, budget: int, zeta=(4.16, -0.119)) -> MyopicPolicy:
    """Myopic policy under an online parameter vector (unconstrained scale)."""
    return MyopicPolicy(pop, fl.from_online(theta_hat, *zeta), budget)


# mallard ---------------------------------------------------------------------

def fixed_practice_policy(practice) -> FixedPracticePolicy:
    return FixedPracticePolicy(practice)


@dataclass
class RbfConfig:
    n_grid: tuple = (12, 8)
    low: tuple = (2.0, 0.5)
    high: tuple = (20.0, 7.0)
    bandwidth_factor: float = 1.5
    samples: int = 32
    ridge: float = 1e-8
    sweeps: int = 100
    tol: float = 1e-4
    plan_under: str = "true"      # "true" (theta*) or "estimate"


@dataclass
class RbfValueFunction:
    centers: np.ndarray
    bandwidth: np.ndarray          # per-coordinate
    weights: np.ndarray
    gamma: float
    sup_changes: list = field(default_factory=list)

    def __post_init__(self):
        self.centers = np.atleast_2d(np.asarray(self.centers, dtype=float))
        self.bandwidth = np.broadcast_to(np.asarray(self.bandwidth, dtype=float), (self.centers.shape[1],)).copy()
        self.weights = np.asarray(self.weights, dtype=float)
        if self.weights.shape != (self.centers.shape[0],):
            raise ValueError("need one weight per center")
        if np.any(self.bandwidth <= 0):
            raise ValueError("bandwidth must be positive")

    def features(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        d = (x[:, None, :] - self.centers[None, :, :]) / self.bandwidth
        return np.exp(-0.5 * (d ** 2).sum(-1))

    def __call__(self, x) -> np.ndarray:
        return self.features(x) @ self.weights

    def to_json(self) -> str:
        return json.dumps({"centers": self.centers.tolist(), "bandwidth": self.bandwidth.tolist(),
                           "weights": self.weights.tolist(), "gamma": self.gamma})

    @classmethod
    def from_json(cls, text: str) -> "RbfValueFunction":
        d = json.loads(text)
        return cls(np.array(d["centers"]), np.array(d["bandwidth"]), np.array(d["weights"]), d["gamma"])


class RbfProblem:
    """What fitted value iteration needs from an environment.

    ``sample(x, a, rng, n)`` returns ``(utilities (m, n), next_x (m, n, d))``
    for states ``x`` of shape ``(m, d)`` under action ``a``.
    """

    n_actions: int

    def sample(self, x, a, rng, n):
        raise NotImplementedError


class MallardRbfProblem(RbfProblem):
    """Features are (total population, ponds). The class composition is
    taken from a reference split, because the fitted value function sees
    only the two summary coordinates."""

    n_actions = 4

    def __init__(self, model: MallardModel, theta, split=(0.3, 0.3, 0.2, 0.2)):
        self.model = model
        self.theta = np.asarray(theta, dtype=float)
        s = np.asarray(split, dtype=float)
        self.split = s / s.sum()

    def summarize(self, state: MallardState) -> np.ndarray:
        return np.array([state.total, state.ponds])

    def sample(self, x, a, rng, n):
        x = np.atleast_2d(x)
        m = x.shape[0]
        pops = x[:, :1] * self.split[None, :]
        u = harvest(pops, a, self.model.params) * self.model.harvest_scale
        nxt = deterministic_update(pops, x[:, 1], a, self.model.params).sum(-1)
        eps = rng.standard_normal((m, n))
        ponds = np.maximum(0.0, self.theta[0] + self.theta[1] * x[:, 1:2] + self.model.pond_sd * eps)
        next_x = np.stack([np.broadcast_to(nxt[:, None], (m, n)), ponds], axis=-1)
        return np.broadcast_to(u[:, None], (m, n)), next_x


def _grid(cfg: RbfConfig):
    axes = [np.linspace(lo, hi, k) for lo, hi, k in zip(cfg.low, cfg.high, cfg.n_grid)]
    mesh = np.meshgrid(*axes, indexing="ij")
    centers = np.column_stack([m.ravel() for m in mesh])
    spacing = np.array([(hi - lo) / max(1, k - 1) for lo, hi, k in zip(cfg.low, cfg.high, cfg.n_grid)])
    return centers, cfg.bandwidth_factor * spacing


def fit_rbf_value_iteration(problem: RbfProblem, gamma: float, rng: np.random.Generator,
                            config: RbfConfig | None = None, centers=None, bandwidth=None):
    """Fitted value iteration on the RBF grid.

    Returns ``(value_function, greedy_policy)``. Next-state samples are
    drawn once and reused in every sweep, so the iteration is a fixed
    contraction-like map on the weights.
    """
    cfg = config or RbfConfig()
    if centers is None:
        centers, bw = _grid(cfg)
    else:
        centers = np.atleast_2d(np.asarray(centers, dtype=float))
        bw = bandwidth
    vf = RbfValueFunction(centers, bw, np.zeros(len(centers)), gamma)
    Phi = vf.features(centers)
    m = len(centers)
    samples = [problem.sample(centers, a, rng, cfg.samples) for a in range(problem.n_actions)]
    mean_u = np.stack([u.mean(axis=1) for u, _ in samples], axis=1)          # (m, A)
    # features of sampled next states, averaged over samples: (A, m, m)
    next_phi = np.stack([vf.features(nx.reshape(-1, nx.shape[-1])).reshape(m, cfg.samples, m).mean(axis=1)
                         for _, nx in samples])
    G = Phi.T @ Phi + cfg.ridge * np.eye(m)
    solve = np.linalg.cholesky(G)

    values = Phi @ vf.weights
    growth = 0
    prev_change = math.inf
    for sweep in range(cfg.sweeps):
        q = mean_u + gamma * np.einsum("amk,k->ma", next_phi, vf.weights)
        target = q.max(axis=1)
        w = np.linalg.solve(solve.T, np.linalg.solve(solve, Phi.T @ target))
        vf.weights = w
        new_values = Phi @ w
        change = float(np.abs(new_values - values).max())
        vf.sup_changes.append(change)
        values = new_values
        if change < cfg.tol:
            break
        growth = growth + 1 if change > prev_change else 0
        if growth >= 10:
            raise DivergenceError(f"sup-change grew for 10 consecutive sweeps (last {change:.3g})")
        prev_change = change
    return vf, GreedyRbfPolicy(vf, problem, gamma, cfg.samples)


class GreedyRbfPolicy:
    """One-step lookahead on a fitted value function."""

    def __init__(self, vf: RbfValueFunction, problem: RbfProblem, gamma: float, samples: int = 32,
                 seed: int = 0):
        self.vf = vf
        self.problem = problem
        self.gamma = gamma
        self.samples = samples
        self.seed = seed

    def q_values(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        out = np.empty((x.shape[0], self.problem.n_actions))
        for a in range(self.problem.n_actions):
            # the same noise for every action keeps comparisons sharp
            rng = np.random.default_rng(self.seed)
            u, nx = self.problem.sample(x, a, rng, self.samples)
            v = self.vf(nx.reshape(-1, nx.shape[-1])).reshape(u.shape)
            out[:, a] = (u + self.gamma * v).mean(axis=1)
        return out

    def act_x(self, x) -> np.ndarray:
        q = self.q_values(x)
        return np.argmax(q, axis=1)

    def act(self, state, rng=None) -> int:
        x = self.problem.summarize(state) if hasattr(self.problem, "summarize") else state
        return int(self.act_x(x)[0])

    def act_batch(self, states, rng=None):
        pops, ponds = states
        x = np.column_stack([np.asarray(pops).sum(-1), ponds])
        return self.act_x(x)


def mallard_dp_policy(model: MallardModel, theta, gamma: float, rng, config: RbfConfig | None = None,
                      split=(0.3, 0.3, 0.2, 0.2)):
    problem = MallardRbfProblem(model, theta, split)
    return fit_rbf_value_iteration(problem, gamma, rng, config)


__all__ = ["DivergenceError", "NoTreatmentPolicy", "no_treatment_policy", "next_day_infection_probability",
           "MyopicPolicy", "myopic_policy", "fixed_practice_policy", "RbfConfig", "RbfValueFunction",
           "RbfProblem", "MallardRbfProblem", "fit_rbf_value_iteration", "GreedyRbfPolicy",
           "mallard_dp_policy", "PRACTICES"]
