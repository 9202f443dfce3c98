"""Tiny models with hand-computable answers, shared by the tests."""
import numpy as np

from thompson_mdp.estimation import FitResult


class DeterministicChain:
    """State counts epochs; action ``a`` pays ``payoff[a]`` every step."""

    n_params = 1

    def __init__(self, payoff=(1.0, 0.0)):
        self.payoff = tuple(payoff)

    def sample_transition(self, state, action, theta, rng):
        return state + 1, self.payoff[action]

    def log_density(self, next_state, state, action, theta):
        return 0.0 if next_state == state + 1 else -np.inf

    def to_natural(self, theta):
        return theta

    def to_unconstrained(self, natural):
        return np.asarray(natural, dtype=float)


class QuadraticModel:
    """Every transition contributes ``-theta^2 / 2`` to the log-likelihood."""

    n_params = 1

    def sample_transition(self, state, action, theta, rng):
        return state, 0.0

    def log_density(self, next_state, state, action, theta):
        return -0.5 * float(theta[0]) ** 2

    def to_natural(self, theta):
        return theta

    def to_unconstrained(self, natural):
        return np.asarray(natural, dtype=float)


class FixedEstimator:
    """Always returns the same fit, e.g. a zero covariance."""

    def __init__(self, theta_hat, covariance):
        self.theta_hat = np.atleast_1d(np.asarray(theta_hat, dtype=float))
        self.covariance = np.atleast_2d(np.asarray(covariance, dtype=float))

    def fit(self, history, model, init, next_state=None):
        return FitResult(self.theta_hat, self.covariance, True, 0.0, 0)


class FailingEstimator:
    def fit(self, history, model, init, next_state=None):
        from thompson_mdp.core import EstimationError
        raise EstimationError("always fails")
