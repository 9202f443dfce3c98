"""Approximate Thompson sampling for parametric MDPs.

One decision epoch ``t``:

1. get a parameter value: the warm start while the history is short,
   otherwise a draw from ``Normal(theta_hat, Omega_hat / n)``;
2. pick the policy that maximizes the value truncated at ``r_t`` under that
   draw;
3. act, observe the next state and utility, and extend the history.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from .core import History, NumericError
from .estimation import FitResult, MLEstimator
from .policy_eval import SearchConfig, SearchResult, ValueEstimate, optimize_policy
from .rng import child_seed, stream

log = logging.getLogger(__name__)

PSD_TOL = 1e-10


def truncation_horizon(t: int, gamma: float) -> int:
    """Rollout length ``max(1, floor(-log t / log gamma^2))``."""
    if not 0.0 < gamma < 1.0:
        raise ValueError(f"gamma must lie in (0, 1), got {gamma}")
    if t < 1:
        raise ValueError(f"t must be >= 1, got {t}")
    return max(1, math.floor(-math.log(t) / math.log(gamma * gamma)))


@dataclass(frozen=True)
class ParameterPosterior:
    """Normal approximation ``Normal(theta_hat, covariance / sample_count)``."""

    theta_hat: np.ndarray
    covariance: np.ndarray
    sample_count: int

    def __post_init__(self):
        th = np.atleast_1d(np.asarray(self.theta_hat, dtype=float))
        cov = np.atleast_2d(np.asarray(self.covariance, dtype=float))
        if cov.shape != (th.size, th.size):
            raise ValueError(f"covariance shape {cov.shape} does not match q={th.size}")
        if not np.allclose(cov, cov.T, rtol=1e-8, atol=1e-12):
            raise ValueError("covariance must be symmetric")
        if self.sample_count < 1:
            raise ValueError("sample_count must be >= 1")
        object.__setattr__(self, "theta_hat", th)
        object.__setattr__(self, "covariance", cov)

    def factor(self) -> np.ndarray:
        """Symmetric square root of the covariance, eigenvalues clipped at 0."""
        cov = 0.5 * (self.covariance + self.covariance.T)
        w, V = np.linalg.eigh(cov)
        scale = max(1.0, float(np.abs(w).max()) if w.size else 1.0)
        if not np.isfinite(w).all() or w.min() < -PSD_TOL * scale:
            raise NumericError(f"covariance is not positive semidefinite (min eigenvalue {w.min():.3g})")
        return (V * np.sqrt(np.clip(w, 0.0, None))) @ V.T


def draw_perturbed_parameters(posterior: ParameterPosterior, rng: np.random.Generator) -> np.ndarray:
    """One draw ``theta_hat + L z / sqrt(sample_count)`` with ``L L^T = covariance``.

    The parameter space is all of R^q on the unconstrained scale, so the
    projection step is the identity.
    """
    L = posterior.factor()
    z = rng.standard_normal(posterior.theta_hat.size)
    return posterior.theta_hat + (L @ z) / math.sqrt(posterior.sample_count)


@dataclass
class EngineConfig:
    gamma: float = 0.9
    rollouts_per_eval: int = 64
    policy_search_budget: int = 200
    master_seed: int = 0
    restarts: int = 3
    search_max_iter: int = 200
    search_tol: float = 1e-3
    min_fit_epochs: int = 5
    refit_every: int = 1
    ridge: float = 1e-6
    ridge_center: str = "zero"      # "zero" or "warm-start" (ridge acts as a prior around theta_init)
    warm_start_eta: bool = True
    exact_values: bool = False      # closed-form policy values when the model provides them

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie strictly inside (0, 1)")
        for name in ("rollouts_per_eval", "policy_search_budget", "refit_every", "restarts"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.ridge < 0:
            raise ValueError("ridge must be nonnegative")
        if self.ridge_center not in ("zero", "warm-start"):
            raise ValueError("ridge_center must be 'zero' or 'warm-start'")

    def search_config(self) -> SearchConfig:
        return SearchConfig(gamma=self.gamma, rollouts=self.rollouts_per_eval,
                            budget=self.policy_search_budget, restarts=self.restarts,
                            max_iter=self.search_max_iter, tol=self.search_tol,
                            exact=self.exact_values)


@dataclass
class EpochDiagnostics:
    t: int
    horizon: int
    theta_tilde: np.ndarray
    value: ValueEstimate
    policy_params: np.ndarray | None
    policy_index: int | None
    source: str                     # "warm-start", "draw" or "fallback"
    fit: FitResult | None = field(default=None, repr=False)
    evaluations: int = 0
    budget_exhausted: bool = False


@dataclass
class EpochResult:
    action: Any
    next_state: Any
    utility: float
    history: History
    diagnostics: EpochDiagnostics


class ThompsonSampler:
    """Holds the cross-epoch state of the algorithm: estimator warm start,
    the last posterior and the last chosen policy parameters."""

    def __init__(self, model, policy_class, config: EngineConfig, theta_init: np.ndarray,
                 estimator: MLEstimator | None = None):
        self.model = model
        self.policy_class = policy_class
        self.config = config
        self.theta_init = np.asarray(theta_init, dtype=float)
        if estimator is None:
            center = self.theta_init if config.ridge_center == "warm-start" else None
            estimator = MLEstimator(ridge=config.ridge, center=center)
        self.estimator = estimator
        self.posterior: ParameterPosterior | None = None
        self.last_params: np.ndarray | None = None
        self._last_fit_t: int | None = None

    # step (iv)-(v)
    def parameter_draw(self, history: History, state, rng: np.random.Generator) -> tuple[np.ndarray, str, FitResult | None]:
        n_trans = len(history)  # transitions ending at the current state
        t = n_trans + 1
        if n_trans < max(1, self.config.min_fit_epochs):
            return self.theta_init.copy(), "warm-start", None
        fit = None
        due = self._last_fit_t is None or (t - self._last_fit_t) >= self.config.refit_every
        if due:
            try:
                fit = self.estimator.fit(history, self.model, self.theta_init, next_state=state)
                self.posterior = ParameterPosterior(fit.theta_hat, fit.covariance, t)
                self._last_fit_t = t
            except Exception as exc:
                log.warning("estimation failed at t=%d (%s); keeping previous posterior", t, exc)
                if self.posterior is None:
                    return self.theta_init.copy(), "fallback", None
        else:
            self.posterior = ParameterPosterior(self.posterior.theta_hat, self.posterior.covariance, t)
        return draw_perturbed_parameters(self.posterior, rng), "draw", fit

    def choose(self, state, history: History, rng: np.random.Generator):
        t = len(history) + 1
        draw_rng = stream(child_seed(rng), 0)
        search_rng = stream(child_seed(rng), 1)
        theta, source, fit = self.parameter_draw(history, state, draw_rng)
        horizon = truncation_horizon(t, self.config.gamma)
        pc = self.policy_class
        if self.config.warm_start_eta and self.last_params is not None and hasattr(pc, "initial"):
            pc.initial = self.last_params
        res: SearchResult = optimize_policy(self.model, theta, pc, horizon, self.config.search_config(),
                                            search_rng, state)
        if res.params is not None:
            self.last_params = res.params
        diag = EpochDiagnostics(t, horizon, theta, res.value, res.params, res.index, source, fit,
                                res.evaluations, res.budget_exhausted)
        return res.policy, diag

    def epoch(self, state, history: History, env_step: Callable[[Any, Any, np.random.Generator], tuple[Any, float]],
              rng: np.random.Generator) -> EpochResult:
        """Run one decision epoch against the real system ``env_step``."""
        act_rng = stream(child_seed(rng), 2)
        env_rng = stream(child_seed(rng), 3)
        policy, diag = self.choose(state, history, rng)
        action = policy.act(state, act_rng)
        next_state, utility = env_step(state, action, env_rng)
        history.append(state, action, utility)
        return EpochResult(action, next_state, float(utility), history, diag)


def ts_epoch(state, history: History, model, policy_class, estimator: MLEstimator, config: EngineConfig,
             env_step, rng: np.random.Generator, theta_init: np.ndarray) -> EpochResult:
    """Functional form of a single epoch with a fresh sampler."""
    sampler = ThompsonSampler(model, policy_class, config, theta_init, estimator)
    return sampler.epoch(state, history, env_step, rng)


def write_diagnostics(path, diagnostics: list[EpochDiagnostics]) -> None:
    """Per-epoch CSV: t, r_t, policy parameters, estimated value, theta components."""
    if not diagnostics:
        raise ValueError("no diagnostics to write")
    q = diagnostics[0].theta_tilde.size
    d = 0 if diagnostics[0].policy_params is None else diagnostics[0].policy_params.size
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "r_t", "policy_index"] + [f"eta_{i}" for i in range(d)]
                   + ["value", "value_se", "source"] + [f"theta_{j}" for j in range(q)])
        for dg in diagnostics:
            params = [] if dg.policy_params is None else [repr(float(x)) for x in dg.policy_params]
            w.writerow([dg.t, dg.horizon, "" if dg.policy_index is None else dg.policy_index] + params
                       + [repr(dg.value.mean), repr(dg.value.standard_error), dg.source]
                       + [repr(float(x)) for x in dg.theta_tilde])
