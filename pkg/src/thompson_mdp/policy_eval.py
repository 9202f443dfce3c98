"""Truncated Monte Carlo policy values and policy search.

``estimate_value`` averages discounted returns over simulated rollouts.
``optimize_policy`` maximizes that estimate over a policy class. Every
candidate in one search is evaluated with the same random stream (common
random numbers), so comparisons between candidates are not swamped by
simulation noise.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np

from .rng import child_seed, stream


class RolloutError(RuntimeError):
    """An environment transition failed inside a rollout."""


@dataclass(frozen=True)
class ValueEstimate:
    mean: float
    standard_error: float
    rollouts: int
    horizon: int


def discounted_returns(utilities: np.ndarray, gamma: float) -> np.ndarray:
    """Row sums of ``gamma**k * utilities[:, k]``."""
    utilities = np.atleast_2d(utilities)
    w = gamma ** np.arange(utilities.shape[1])
    return utilities @ w


def summarize(returns: np.ndarray, horizon: int) -> ValueEstimate:
    returns = np.asarray(returns, dtype=float)
    n = returns.size
    se = float(returns.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return ValueEstimate(float(returns.mean()), se, n, int(horizon))


def estimate_value(model, theta: np.ndarray, policy, horizon: int, start, n: int, gamma: float,
                   rng: np.random.Generator) -> ValueEstimate:
    """Monte Carlo estimate of the ``horizon``-step discounted value of ``policy``.

    Rollouts start at ``start`` and simulate under ``theta``. Models that
    implement ``simulate_returns`` run all rollouts as one vectorized batch.
    Otherwise rollout ``i`` uses its own stream derived from ``rng`` and
    index ``i``.
    """
    if horizon < 1 or n < 1:
        raise ValueError("horizon and rollout count must be >= 1")
    theta = np.asarray(theta, dtype=float)
    batch = getattr(model, "simulate_returns", None)
    if batch is not None:
        returns = batch(start, policy, theta, horizon, n, gamma, rng)
        return summarize(returns, horizon)

    base = child_seed(rng)
    returns = np.empty(n)
    for i in range(n):
        r_i = stream(base, i)
        s = start
        total = 0.0
        disc = 1.0
        try:
            for _ in range(horizon):
                a = policy.act(s, r_i)
                s, u = model.sample_transition(s, a, theta, r_i)
                total += disc * u
                disc *= gamma
        except Exception as exc:  # attach the rollout index, keep the original cause
            raise RolloutError(f"rollout {i} failed: {exc}") from exc
        returns[i] = total
    return summarize(returns, horizon)


# policy classes ------------------------------------------------------------

class FinitePolicyClass:
    """An explicitly enumerated list of policies."""

    def __init__(self, members: Sequence[Any], labels: Sequence[str] | None = None):
        if not members:
            raise ValueError("empty policy class")
        self.members = list(members)
        self.labels = list(labels) if labels is not None else [str(i) for i in range(len(members))]

    def __len__(self) -> int:
        return len(self.members)


class ParametricPolicyClass:
    """A continuous family ``eta -> policy``.

    The search runs on ``z = eta / scale`` so that every coordinate has a
    comparable range. This is a reparametrization of the same class.
    """

    def __init__(self, make: Callable[[np.ndarray], Any], dim: int, scale: Sequence[float] | None = None,
                 initial: Sequence[float] | None = None):
        self.make = make
        self.dim = int(dim)
        self.scale = np.ones(dim) if scale is None else np.asarray(scale, dtype=float)
        self.initial = None if initial is None else np.asarray(initial, dtype=float)

    def policy(self, eta: np.ndarray):
        return self.make(np.asarray(eta, dtype=float))


@dataclass
class SearchConfig:
    gamma: float
    rollouts: int = 64
    budget: int = 200          # total value evaluations allowed
    restarts: int = 3
    max_iter: int = 200
    tol: float = 1e-3          # simplex diameter
    init_spread: float = 1.0
    exact: bool = False        # use model.exact_value instead of rollouts when the model has one


@dataclass
class SearchResult:
    policy: Any
    value: ValueEstimate
    params: np.ndarray | None
    index: int | None
    evaluations: int
    budget_exhausted: bool = False
    history: list[tuple[tuple[float, ...], float]] = field(default_factory=list, repr=False)

    def __iter__(self):
        yield self.policy
        yield self.value


# Nelder-Mead ----------------------------------------------------------------

@dataclass
class SimplexResult:
    x: np.ndarray
    fx: float
    evaluations: int
    iterations: int
    converged: bool


def nelder_mead(f, simplex: np.ndarray, max_iter: int = 200, tol: float = 1e-3,
                max_evals: int | None = None) -> SimplexResult:
    """Minimize ``f`` from an initial ``(d+1, d)`` simplex.

    Stops when the simplex diameter (largest vertex distance) falls below
    ``tol``, after ``max_iter`` iterations, or when ``max_evals`` function
    evaluations are used up.
    """
    pts = np.array(simplex, dtype=float)
    d = pts.shape[1]
    budget = math.inf if max_evals is None else max_evals
    vals = []
    evals = 0
    for p in pts:
        if evals >= budget:
            break
        vals.append(f(p))
        evals += 1
    if len(vals) < d + 1:
        best = int(np.argmin(vals)) if vals else 0
        return SimplexResult(pts[best], vals[best] if vals else math.inf, evals, 0, False)
    vals = np.array(vals, dtype=float)

    def diameter():
        diff = pts[:, None, :] - pts[None, :, :]
        return float(np.sqrt((diff ** 2).sum(-1)).max())

    it = 0
    converged = False
    while it < max_iter:
        order = np.lexsort((np.arange(d + 1), vals))
        pts, vals = pts[order], vals[order]
        if diameter() < tol:
            converged = True
            break
        if evals >= budget:
            break
        it += 1
        centroid = pts[:-1].mean(axis=0)
        xr = centroid + (centroid - pts[-1])
        fr = f(xr)
        evals += 1
        if vals[0] <= fr < vals[-2]:
            pts[-1], vals[-1] = xr, fr
            continue
        if fr < vals[0]:
            if evals >= budget:
                pts[-1], vals[-1] = xr, fr
                continue
            xe = centroid + 2.0 * (centroid - pts[-1])
            fe = f(xe)
            evals += 1
            if fe < fr:
                pts[-1], vals[-1] = xe, fe
            else:
                pts[-1], vals[-1] = xr, fr
            continue
        if evals >= budget:
            if fr < vals[-1]:
                pts[-1], vals[-1] = xr, fr
            continue
        if fr < vals[-1]:
            xc = centroid + 0.5 * (xr - centroid)
        else:
            xc = centroid + 0.5 * (pts[-1] - centroid)
        fc = f(xc)
        evals += 1
        if fc < min(fr, vals[-1]):
            pts[-1], vals[-1] = xc, fc
            continue
        # shrink toward the best vertex
        for k in range(1, d + 1):
            if evals >= budget:
                break
            pts[k] = pts[0] + 0.5 * (pts[k] - pts[0])
            vals[k] = f(pts[k])
            evals += 1
    order = np.lexsort((np.arange(d + 1), vals))
    pts, vals = pts[order], vals[order]
    return SimplexResult(pts[0].copy(), float(vals[0]), evals, it, converged)


# policy search --------------------------------------------------------------

def optimize_policy(model, theta: np.ndarray, policy_class, horizon: int, config: SearchConfig,
                    rng: np.random.Generator, start) -> SearchResult:
    """Approximate ``argmax_pi V_theta^horizon(pi)`` over ``policy_class``.

    Finite classes are enumerated; ties go to the lowest index.  Parametric
    classes use Nelder-Mead from the class's ``initial`` point (the origin
    when it has none) and then from ``config.restarts`` random simplexes.  All evaluations share one
    random stream (common random numbers).  A class with a ``bind(theta)``
    method is first bound to ``theta``.
    """
    crn_seed = child_seed(rng)
    bind = getattr(policy_class, "bind", None)
    if bind is not None:
        # classes whose policies depend on the sampled parameter
        policy_class = bind(theta)

    def evaluate(policy) -> ValueEstimate:
        return estimate_value(model, theta, policy, horizon, start, config.rollouts, config.gamma,
                              stream(crn_seed, 0))

    if config.exact and hasattr(model, "exact_value"):
        def evaluate(policy) -> ValueEstimate:
            return ValueEstimate(float(model.exact_value(theta, policy, horizon, config.gamma, start)), 0.0, 0,
                                 horizon)

    if isinstance(policy_class, FinitePolicyClass):
        best_i, best_v = None, None
        for i, pol in enumerate(policy_class.members):
            v = evaluate(pol)
            if best_v is None or v.mean > best_v.mean:
                best_i, best_v = i, v
        return SearchResult(policy_class.members[best_i], best_v, None, best_i, len(policy_class))

    if not isinstance(policy_class, ParametricPolicyClass):
        raise TypeError(f"unsupported policy class {type(policy_class).__name__}")

    d = policy_class.dim
    cache: dict[tuple[float, ...], ValueEstimate] = {}
    log: list[tuple[tuple[float, ...], float]] = []

    def value_at(z: np.ndarray) -> ValueEstimate:
        key = tuple(float(c) for c in z)
        if key not in cache:
            cache[key] = evaluate(policy_class.policy(z * policy_class.scale))
            log.append((key, cache[key].mean))
        return cache[key]

    def objective(z):
        return -value_at(z).mean

    init_rng = stream(crn_seed, 1)
    # the class's initial point (the origin if it has none) is always searched first
    starts = [np.zeros(d) if policy_class.initial is None else policy_class.initial / policy_class.scale]
    for _ in range(config.restarts):
        starts.append(init_rng.normal(0.0, config.init_spread, size=d))

    used = 0
    exhausted = False
    for x0 in starts:
        remaining = config.budget - used
        if remaining <= 0:
            exhausted = True
            break
        simplex = np.vstack([x0, x0 + config.init_spread * np.eye(d)])
        res = nelder_mead(objective, simplex, config.max_iter, config.tol, remaining)
        used += res.evaluations
        if used >= config.budget and not res.converged:
            exhausted = True

    # best evaluated point; among equal values the earliest evaluated wins,
    # so a flat objective keeps the starting point
    order = {key: i for i, (key, _) in enumerate(log)}
    best_key = min(cache, key=lambda k: (-cache[k].mean, order[k]))
    eta = np.asarray(best_key) * policy_class.scale
    return SearchResult(policy_class.policy(eta), cache[best_key], eta, None, used, exhausted, log)
