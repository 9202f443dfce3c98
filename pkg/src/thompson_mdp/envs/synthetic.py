"""Small models with exactly computable answers.

They back the regret experiment and much of the test suite:

* ``GaussianAR1Model``: scalar Gaussian AR(1) with closed-form MLE.
* ``TabularModel``: two states and two actions, logistic transition
  probabilities.
* ``SignalChainModel``: two actions over an action-independent Gaussian
  signal. Which action is better depends on the sign of the signal mean.
"""
from __future__ import annotations

import itertools
import math

import numpy as np
from scipy.special import expit, logit
from scipy.stats import norm

LOG_2PI = math.log(2.0 * math.pi)


def gaussian_logpdf(x, mean, var):
    return -0.5 * (LOG_2PI + np.log(var) + (x - mean) ** 2 / var)


class ConstantPolicy:
    def __init__(self, action):
        self.action = action

    def act(self, state, rng=None):
        return self.action

    def act_batch(self, states, rng=None):
        return np.full(np.shape(states), self.action)

    def __repr__(self):
        return f"ConstantPolicy({self.action!r})"


class TablePolicy:
    """Deterministic map from a finite state index to an action."""

    def __init__(self, actions):
        self.actions = tuple(int(a) for a in actions)
        self._arr = np.asarray(self.actions)

    def act(self, state, rng=None):
        return self.actions[int(state)]

    def act_batch(self, states, rng=None):
        return self._arr[np.asarray(states, dtype=int)]

    def __repr__(self):
        return f"TablePolicy({self.actions})"


class GaussianAR1Model:
    """``x' = rho * x + c_a * a + sigma * eps``.

    Parameters on the unconstrained scale: ``(atanh rho, [c_a], log sigma)``.
    With ``sigma`` fixed the log-scale coordinate is dropped.
    """

    def __init__(self, sigma: float | None = None, action_effect: bool = False):
        self.sigma = sigma
        self.action_effect = action_effect
        self.n_params = 1 + int(action_effect) + int(sigma is None)

    def _unpack(self, theta):
        theta = np.asarray(theta, dtype=float)
        rho = math.tanh(theta[0])
        c = theta[1] if self.action_effect else 0.0
        sigma = self.sigma if self.sigma is not None else math.exp(theta[-1])
        return rho, c, sigma

    def to_natural(self, theta):
        rho, c, sigma = self._unpack(theta)
        out = {"rho": rho, "sigma": sigma}
        if self.action_effect:
            out["c"] = c
        return out

    def to_unconstrained(self, natural):
        vals = [math.atanh(natural["rho"])]
        if self.action_effect:
            vals.append(natural["c"])
        if self.sigma is None:
            vals.append(math.log(natural["sigma"]))
        return np.array(vals)

    def sample_transition(self, state, action, theta, rng):
        rho, c, sigma = self._unpack(theta)
        nxt = rho * state + c * (action or 0) + sigma * rng.standard_normal()
        return float(nxt), 0.0

    def log_density(self, next_state, state, action, theta):
        rho, c, sigma = self._unpack(theta)
        return float(gaussian_logpdf(next_state, rho * state + c * (action or 0), sigma ** 2))

    def log_likelihood_batch(self, transitions, theta):
        rho, c, sigma = self._unpack(theta)
        arr = np.array([(s, 0.0 if a is None else a, x) for s, a, x in transitions], dtype=float)
        mean = rho * arr[:, 0] + c * arr[:, 1]
        return float(gaussian_logpdf(arr[:, 2], mean, sigma ** 2).sum())


class TabularModel:
    """Two states, two actions; ``P(s'=1 | s, a) = expit(theta[2 s + a])``.

    ``utility[s, a, s']`` must lie in [-1, 1].
    """

    n_states = 2
    n_actions = 2
    n_params = 4

    def __init__(self, utility):
        self.utility = np.asarray(utility, dtype=float).reshape(2, 2, 2)
        if np.abs(self.utility).max() > 1.0:
            raise ValueError("utilities must lie in [-1, 1]")

    def to_natural(self, theta):
        return expit(np.asarray(theta, dtype=float)).reshape(2, 2)

    def to_unconstrained(self, natural):
        return logit(np.asarray(natural, dtype=float).reshape(4))

    def p_one(self, theta):
        return expit(np.asarray(theta, dtype=float)).reshape(2, 2)

    def sample_transition(self, state, action, theta, rng):
        p = self.p_one(theta)[state, action]
        nxt = int(rng.random() < p)
        return nxt, float(self.utility[state, action, nxt])

    def log_density(self, next_state, state, action, theta):
        p = self.p_one(theta)[state, action]
        return math.log(p if next_state == 1 else 1.0 - p)

    def simulate_returns(self, start, policy, theta, horizon, n, gamma, rng):
        p = self.p_one(theta)
        s = np.full(n, int(start))
        out = np.zeros(n)
        disc = 1.0
        for _ in range(horizon):
            a = np.asarray(policy.act_batch(s, rng), dtype=int)
            nxt = (rng.random(n) < p[s, a]).astype(int)
            out += disc * self.utility[s, a, nxt]
            s = nxt
            disc *= gamma
        return out

    def policies(self):
        return [TablePolicy(acts) for acts in itertools.product(range(2), repeat=2)]

    def exact_value(self, theta, policy, horizon, gamma, start):
        """Expected truncated discounted return by forward recursion on the
        state distribution."""
        p = self.p_one(theta)
        dist = np.zeros(2)
        dist[int(start)] = 1.0
        total = 0.0
        for k in range(horizon):
            new = np.zeros(2)
            for s in range(2):
                if dist[s] == 0.0:
                    continue
                a = policy.act(s)
                p1 = p[s, a]
                total += gamma ** k * dist[s] * ((1 - p1) * self.utility[s, a, 0] + p1 * self.utility[s, a, 1])
                new[0] += dist[s] * (1 - p1)
                new[1] += dist[s] * p1
            dist = new
        return total


class SignalChainModel:
    """Action-independent signal ``x' ~ Normal(mu, sigma^2)``.

    Action 0 pays 0, action 1 pays ``+1`` when ``x' > 0`` and ``-1``
    otherwise. Acting is optimal iff ``mu > 0``, and the per-step gap is
    ``|2 Phi(mu / sigma) - 1|``. The estimated parameters are
    ``(mu, log sigma)``, or ``mu`` alone when ``sigma`` is fixed.
    """

    n_actions = 2

    def __init__(self, sigma: float | None = None):
        self.sigma = sigma
        self.n_params = 1 if sigma is not None else 2

    def _unpack(self, theta):
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        mu = float(theta[0])
        sigma = self.sigma if self.sigma is not None else math.exp(theta[1])
        return mu, sigma

    def to_natural(self, theta):
        mu, sigma = self._unpack(theta)
        return {"mu": mu, "sigma": sigma}

    def to_unconstrained(self, natural):
        if self.sigma is not None:
            return np.array([natural["mu"]])
        return np.array([natural["mu"], math.log(natural["sigma"])])

    @staticmethod
    def utility(action, x_next):
        if action == 0:
            return 0.0
        return 1.0 if x_next > 0 else -1.0

    def sample_transition(self, state, action, theta, rng):
        mu, sigma = self._unpack(theta)
        x = mu + sigma * rng.standard_normal()
        return float(x), self.utility(action, x)

    def log_density(self, next_state, state, action, theta):
        mu, sigma = self._unpack(theta)
        return float(gaussian_logpdf(next_state, mu, sigma ** 2))

    def log_likelihood_batch(self, transitions, theta):
        mu, sigma = self._unpack(theta)
        x = np.fromiter((t[2] for t in transitions), float, len(transitions))
        return float(gaussian_logpdf(x, mu, sigma ** 2).sum())

    def log_likelihood_grad_batch(self, transitions, theta):
        mu, sigma = self._unpack(theta)
        x = np.fromiter((t[2] for t in transitions), float, len(transitions))
        r = x - mu
        g_mu = r.sum() / sigma ** 2
        if self.sigma is not None:
            return np.array([g_mu])
        g_ls = float((r ** 2).sum() / sigma ** 2 - x.size)
        return np.array([g_mu, g_ls])

    def simulate_returns(self, start, policy, theta, horizon, n, gamma, rng):
        mu, sigma = self._unpack(theta)
        x = mu + sigma * rng.standard_normal((n, horizon))
        a = np.asarray(policy.act_batch(np.zeros(n), rng), dtype=float)
        u = a[:, None] * np.where(x > 0, 1.0, -1.0)
        return u @ (gamma ** np.arange(horizon))

    def step_value(self, theta, action) -> float:
        mu, sigma = self._unpack(theta)
        return 0.0 if action == 0 else 2.0 * float(norm.cdf(mu / sigma)) - 1.0

    def exact_value(self, theta, policy, horizon, gamma, start=0.0):
        disc = (1.0 - gamma ** horizon) / (1.0 - gamma)
        return self.step_value(theta, policy.act(start)) * disc

    def policies(self):
        return [ConstantPolicy(0), ConstantPolicy(1)]
