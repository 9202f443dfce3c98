"""Mallard harvest management model.

The state is the adult/young, male/female populations plus the number of
ponds, all in millions. Each year one of four harvest practices is applied.
Given the practice, the population update is deterministic. Pond counts
follow a Gaussian AR(1) with unknown ``(beta0, beta1)``, which is the online
parameter.

Survival and harvest tables are not published with the model and are
configurable. The defaults below are assumptions, not fitted values.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict

import numpy as np
from scipy.stats import norm

from ..core import History, ImpossibleTransitionError

PRACTICES = ("liberal", "moderate", "restricted", "closed")
CLASSES = ("AM", "AF", "YM", "YF")
YOUNG_MALE_RATIO = 0.897
POND_SD = 0.25
HARVEST_SCALE = 1.0 / 30.0
BETA_TRUE = (2.2127, 0.3420)

# rows: AM, AF, YM, YF; columns: liberal, moderate, restricted, closed
DEFAULT_SURVIVAL = (
    (0.81, 0.84, 0.88, 0.92),
    (0.68, 0.71, 0.75, 0.79),
    (0.77, 0.80, 0.85, 0.90),
    (0.64, 0.67, 0.72, 0.77),
)
# 1995-2016, liberal except a moderate season in 2002 (configurable)
DEFAULT_HISTORICAL_ACTIONS = tuple(["liberal"] * 7 + ["moderate"] + ["liberal"] * 14)


def practice_index(a) -> int:
    if isinstance(a, str):
        return PRACTICES.index(a.lower())
    a = int(a)
    if not 0 <= a < len(PRACTICES):
        raise ValueError(f"practice index {a} out of range")
    return a


def reproduction_rate(ponds, total):
    """``max(0, 0.7166 + 0.1083 P - 0.0373 N)``; P and N in millions."""
    return np.maximum(0.0, 0.7166 + 0.1083 * np.asarray(ponds, dtype=float) - 0.0373 * np.asarray(total, dtype=float))


@dataclass(frozen=True)
class MallardState:
    n_am: float
    n_af: float
    n_ym: float
    n_yf: float
    ponds: float
    year: int = 0

    @property
    def total(self) -> float:
        return self.n_am + self.n_af + self.n_ym + self.n_yf

    @property
    def reproduction(self) -> float:
        return float(reproduction_rate(self.ponds, self.total))

    def populations(self) -> np.ndarray:
        return np.array([self.n_am, self.n_af, self.n_ym, self.n_yf])

    def to_json(self) -> str:
        return json.dumps(asdict(self))

    @classmethod
    def from_json(cls, text: str) -> "MallardState":
        return cls(**json.loads(text))


@dataclass
class MallardParameters:
    beta0: float = BETA_TRUE[0]
    beta1: float = BETA_TRUE[1]
    survival: tuple = DEFAULT_SURVIVAL
    harvest: tuple | None = None  # default: survival(closed) - survival(a)

    def __post_init__(self):
        S = np.asarray(self.survival, dtype=float)
        if S.shape != (4, 4) or S.min() < 0 or S.max() > 1:
            raise ValueError("survival table must be 4x4 with entries in [0, 1]")
        if np.any(np.diff(S, axis=1) < 0):
            raise ValueError("survival must not decrease from liberal to closed")
        H = S[:, [3]] - S if self.harvest is None else np.asarray(self.harvest, dtype=float)
        if H.shape != (4, 4) or H.min() < 0 or H.max() > 1:
            raise ValueError("harvest table must be 4x4 with entries in [0, 1]")
        if np.any(np.diff(H, axis=1) > 0) or np.any(H[:, 3] != 0):
            raise ValueError("harvest must not increase from liberal to closed and be 0 when closed")
        self._S = S
        self._H = H

    @property
    def survival_table(self) -> np.ndarray:
        return self._S

    @property
    def harvest_table(self) -> np.ndarray:
        return self._H


def deterministic_update(pops: np.ndarray, ponds, action, params: MallardParameters) -> np.ndarray:
    """Next populations; ``pops`` has the four classes on the last axis."""
    pops = np.asarray(pops, dtype=float)
    a = np.asarray(action, dtype=int)
    S = params.survival_table
    s_am, s_af, s_ym, s_yf = S[0, a], S[1, a], S[2, a], S[3, a]
    am, af, ym, yf = pops[..., 0], pops[..., 1], pops[..., 2], pops[..., 3]
    R = reproduction_rate(ponds, pops.sum(axis=-1))
    out = np.stack([
        am * s_am + YOUNG_MALE_RATIO * am * R * s_ym,
        af * (s_af + R * s_yf),
        ym * s_am + YOUNG_MALE_RATIO * yf * R * s_ym,
        yf * (s_af + R * s_yf),
    ], axis=-1)
    return np.maximum(out, 0.0)


def harvest(pops: np.ndarray, action, params: MallardParameters):
    """Unscaled harvest (millions) taken from the current populations."""
    a = np.asarray(action, dtype=int)
    H = params.harvest_table
    pops = np.asarray(pops, dtype=float)
    return sum(pops[..., c] * H[c, a] for c in range(4))


class FixedPracticePolicy:
    def __init__(self, practice):
        self.practice = practice_index(practice)

    def act(self, state, rng=None) -> int:
        return self.practice

    def act_batch(self, states, rng=None):
        return np.full(len(states[0]) if isinstance(states, tuple) else len(states), self.practice)

    def __repr__(self):
        return f"FixedPracticePolicy({PRACTICES[self.practice]})"


class MallardModel:
    """Dynamics model with online parameter ``theta = (beta0, beta1)``."""

    n_params = 2

    def __init__(self, params: MallardParameters | None = None, pond_sd: float = POND_SD,
                 harvest_scale: float = HARVEST_SCALE):
        self.params = params or MallardParameters()
        self.pond_sd = pond_sd
        self.harvest_scale = harvest_scale

    def to_natural(self, theta):
        return {"beta0": float(theta[0]), "beta1": float(theta[1])}

    def to_unconstrained(self, natural):
        return np.array([natural["beta0"], natural["beta1"]], dtype=float)

    @property
    def theta_true(self) -> np.ndarray:
        return np.array([self.params.beta0, self.params.beta1])

    def step(self, state: MallardState, action, theta, rng) -> tuple[MallardState, float, float]:
        """Returns ``(next_state, utility, unscaled_harvest)``."""
        a = practice_index(action)
        pops = state.populations()
        nxt = deterministic_update(pops, state.ponds, a, self.params)
        mean = theta[0] + theta[1] * state.ponds
        ponds = max(0.0, mean + self.pond_sd * rng.standard_normal())
        h = float(harvest(pops, a, self.params))
        return MallardState(*map(float, nxt), float(ponds), state.year + 1), h * self.harvest_scale, h

    def sample_transition(self, state, action, theta, rng):
        nxt, u, _ = self.step(state, action, theta, rng)
        return nxt, u

    def log_density(self, next_state: MallardState, state: MallardState, action, theta) -> float:
        a = practice_index(action)
        expect = deterministic_update(state.populations(), state.ponds, a, self.params)
        if not np.allclose(next_state.populations(), expect, rtol=0.0, atol=1e-8):
            raise ImpossibleTransitionError("population components do not follow the deterministic update")
        mean = theta[0] + theta[1] * state.ponds
        if next_state.ponds <= 0.0:
            return float(norm.logcdf(-mean / self.pond_sd))
        z = (next_state.ponds - mean) / self.pond_sd
        return -0.5 * (math.log(2.0 * math.pi * self.pond_sd ** 2) + z * z)

    def _pond_arrays(self, transitions):
        p = np.array([s.ponds for s, _, _ in transitions])
        p_next = np.array([s2.ponds for _, _, s2 in transitions])
        return p, p_next

    def log_likelihood_batch(self, transitions, theta):
        for s, a, s2 in transitions:
            expect = deterministic_update(s.populations(), s.ponds, practice_index(a), self.params)
            if not np.allclose(s2.populations(), expect, rtol=0.0, atol=1e-8):
                raise ImpossibleTransitionError("population components do not follow the deterministic update")
        p, p_next = self._pond_arrays(transitions)
        mean = theta[0] + theta[1] * p
        z = (p_next - mean) / self.pond_sd
        ll = -0.5 * (math.log(2.0 * math.pi * self.pond_sd ** 2) + z * z)
        clamped = p_next <= 0.0
        if clamped.any():
            ll[clamped] = norm.logcdf(-mean[clamped] / self.pond_sd)
        return float(ll.sum())

    def log_likelihood_grad_batch(self, transitions, theta):
        p, p_next = self._pond_arrays(transitions)
        mean = theta[0] + theta[1] * p
        r = (p_next - mean) / self.pond_sd ** 2
        clamped = p_next <= 0.0
        if clamped.any():
            zc = -mean[clamped] / self.pond_sd
            # d/dmean log Phi(-mean/sd) = -phi/Phi / sd
            r[clamped] = -np.exp(norm.logpdf(zc) - norm.logcdf(zc)) / self.pond_sd
        return np.array([r.sum(), (r * p).sum()])

    def simulate_returns(self, start: MallardState, policy, theta, horizon, n, gamma, rng):
        pops = np.tile(start.populations(), (n, 1))
        ponds = np.full(n, start.ponds)
        out = np.zeros(n)
        disc = 1.0
        for _ in range(horizon):
            a = np.asarray(policy.act_batch((pops, ponds), rng), dtype=int)
            out += disc * harvest(pops, a, self.params) * self.harvest_scale
            pops = deterministic_update(pops, ponds, a, self.params)
            ponds = np.maximum(0.0, theta[0] + theta[1] * ponds + self.pond_sd * rng.standard_normal(n))
            disc *= gamma
        return out


@dataclass
class MallardConfig:
    initial_total: float = 8.0
    split: tuple = (0.3, 0.3, 0.2, 0.2)         # AM, AF, YM, YF shares (assumed)
    initial_ponds: float | None = None           # default: stationary pond mean
    beta: tuple = BETA_TRUE
    survival: tuple = DEFAULT_SURVIVAL
    harvest: tuple | None = None
    historical_actions: tuple = DEFAULT_HISTORICAL_ACTIONS
    horizon: int = 15
    gamma: float = 0.9
    rollouts: int = 256

    def parameters(self) -> MallardParameters:
        return MallardParameters(self.beta[0], self.beta[1], tuple(map(tuple, self.survival)),
                                 None if self.harvest is None else tuple(map(tuple, self.harvest)))

    def initial_state(self) -> MallardState:
        split = np.asarray(self.split, dtype=float)
        split = split / split.sum()
        pops = self.initial_total * split
        ponds = self.initial_ponds
        if ponds is None:
            ponds = self.beta[0] / (1.0 - self.beta[1])
        return MallardState(*map(float, pops), float(ponds), 0)


def simulate_history(model: MallardModel, config: MallardConfig, rng) -> tuple[History, MallardState, list[float]]:
    """Historical period under the true betas and the configured practices.

    Returns the history, the state at the start of management, and the
    yearly unscaled harvests.
    """
    theta = np.asarray(config.beta, dtype=float)
    state = config.initial_state()
    hist = History()
    harvests = []
    for a in config.historical_actions:
        a = practice_index(a)
        nxt, u, h = model.step(state, a, theta, rng)
        hist.append(state, a, u)
        harvests.append(h)
        state = nxt
    return hist, state, harvests
