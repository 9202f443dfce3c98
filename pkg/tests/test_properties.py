"""Randomized invariants, 1000 cases each."""
import math
from functools import lru_cache

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from thompson_mdp.core import BoundViolationError, History
from thompson_mdp.engine import ParameterPosterior, draw_perturbed_parameters, truncation_horizon
from thompson_mdp.envs import flu as fl
from thompson_mdp.envs.flu import INFECTED, RECOVERED, SUSCEPTIBLE, FluState
from thompson_mdp.envs.mallard import MallardModel, MallardState, reproduction_rate
from thompson_mdp.envs.synthetic import TabularModel
from thompson_mdp.policy_eval import estimate_value
from thompson_mdp.rng import stream

CASES = settings(max_examples=1000, deadline=None, derandomize=True,
                 suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large])

seeds = st.integers(0, 2**32 - 1)
gammas = st.sampled_from([0.5, 0.75, 0.9, 0.95, 0.99])


@lru_cache(maxsize=None)
def small_flu(network):
    cfg = fl.FluConfig(L=40, network=network, ba_m=2, er_mean_degree=4.0, agents_per_school=15,
                       agents_per_employer=8)
    return fl.build_environment(cfg, stream(100, network))


# engine --------------------------------------------------------------------

@CASES
@given(t=st.integers(1, 10**6), gamma=st.floats(0.01, 0.999))
def test_truncation_horizon(t, gamma):
    r = truncation_horizon(t, gamma)
    assert r >= 1
    assert r == max(1, math.floor(-math.log(t) / math.log(gamma ** 2)))
    assert truncation_horizon(t + 1, gamma) >= r


@CASES
@given(theta=st.lists(st.floats(-50, 50), min_size=1, max_size=4), n=st.integers(1, 10**4), seed=seeds)
def test_zero_covariance_draw_is_the_estimate(theta, n, seed):
    q = len(theta)
    post = ParameterPosterior(np.array(theta), np.zeros((q, q)), n)
    assert np.array_equal(draw_perturbed_parameters(post, stream(seed)), np.array(theta))


# streams and reproducibility ------------------------------------------------------

@CASES
@given(seed=st.integers(0, 2**63), keys=st.lists(st.integers(0, 2**32), max_size=3))
def test_streams_are_bit_reproducible(seed, keys):
    a = stream(seed, *keys).random(4)
    b = stream(seed, *keys).random(4)
    assert a.tobytes() == b.tobytes()


@CASES
@given(seed=seeds, T=st.integers(1, 6), gamma=gammas, table=st.integers(0, 3))
def test_value_estimates_reproducible_and_bounded(seed, T, gamma, table):
    rng = np.random.default_rng(seed)
    m = TabularModel(rng.uniform(-1, 1, size=(2, 2, 2)))
    theta = rng.normal(0, 2, size=4)
    pol = m.policies()[table]
    v1 = estimate_value(m, theta, pol, T, 0, 8, gamma, stream(seed))
    v2 = estimate_value(m, theta, pol, T, 0, 8, gamma, stream(seed))
    assert v1.mean == v2.mean and v1.standard_error == v2.standard_error
    assert abs(v1.mean) <= (1 - gamma ** T) / (1 - gamma) + 1e-12
    assert v1.standard_error >= 0


# history -------------------------------------------------------------------------

@CASES
@given(u=st.floats(allow_nan=True, allow_infinity=True))
def test_history_utility_bounds(u):
    h = History()
    if math.isfinite(u) and abs(u) <= 1:
        h.append(0, 0, u)
        assert h[0].utility == u
    else:
        with pytest.raises(BoundViolationError):
            h.append(0, 0, u)
        assert len(h) == 0


# flu ---------------------------------------------------------------------------

@CASES
@given(scores=st.lists(st.integers(-3, 3), min_size=1, max_size=30), M=st.integers(0, 35), seed=seeds)
def test_top_m_budget(scores, M, seed):
    s = np.array(scores, dtype=float)
    pick = fl.top_m(s, M, stream(seed))[0]
    assert pick.sum() == min(M, s.size)
    if 0 < pick.sum() < s.size:
        assert s[pick == 1].min() >= s[pick == 0].max()


@CASES
@given(network=st.sampled_from(["ER", "BA", "WS"]), seed=seeds, day=st.integers(0, 13),
       probs=st.tuples(st.floats(0, 1), st.floats(0, 1)))
def test_flu_step_conservation_and_finite_likelihood(network, seed, day, probs):
    model, s0, theta = small_flu(network)
    rng = stream(seed)
    L = s0.L
    status = rng.choice(3, size=L, p=[probs[0] * (1 - probs[1]), probs[1], (1 - probs[0]) * (1 - probs[1])]
                        ).astype(np.int8)
    state = FluState(status, rng.normal(0, 2, size=L), day)
    budget = L // 5
    actions = fl.top_m(rng.random(L), budget, rng)[0]
    assert actions.sum() == budget
    nxt, u, new = model.step(state, actions, theta, rng)
    assert nxt.counts().sum() == L
    assert nxt.day == day + 1
    ok = ((status == nxt.status) | ((status == SUSCEPTIBLE) & (nxt.status == INFECTED))
          | ((status == INFECTED) & (nxt.status == RECOVERED)))
    assert ok.all()
    assert new == int(((status == SUSCEPTIBLE) & (nxt.status == INFECTED)).sum())
    assert -1 <= u <= 0
    assert math.isfinite(model.log_density(nxt, state, actions, theta))


@CASES
@given(network=st.sampled_from(["ER", "BA"]), seed=seeds, eta=st.lists(st.floats(-5, 5), min_size=5, max_size=5))
def test_priority_policy_budget(network, seed, eta):
    model, s0, theta = small_flu(network)
    pol = fl.PriorityPolicy(np.array(eta), 8, model.pop, model.params_from(theta))
    a = pol.act(s0, stream(seed))
    assert a.sum() == 8 and set(np.unique(a)) <= {0, 1}


# mallard -------------------------------------------------------------------------

MALLARD = MallardModel()


@CASES
@given(pops=st.lists(st.floats(0, 30), min_size=4, max_size=4), ponds=st.floats(0, 10), action=st.integers(0, 3),
       b0=st.floats(0, 4), b1=st.floats(0, 0.9), seed=seeds)
def test_mallard_nonnegative_and_finite(pops, ponds, action, b0, b1, seed):
    s = MallardState(*pops, ponds)
    beta = np.array([b0, b1])
    nxt, u, h = MALLARD.step(s, action, beta, stream(seed))
    assert min(nxt.populations()) >= 0 and nxt.ponds >= 0
    assert 0 <= u <= 1 and h >= 0
    assert math.isfinite(MALLARD.log_density(nxt, s, action, beta))


@CASES
@given(ponds=st.floats(0, 1e3), total=st.floats(0, 1e3))
def test_reproduction_rate_is_clamped(ponds, total):
    r = reproduction_rate(ponds, total)
    assert r >= 0
    assert r == max(0.0, 0.7166 + 0.1083 * ponds - 0.0373 * total)
