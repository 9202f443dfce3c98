"""Agent-based influenza model on social networks.

Each agent is a student, employee or retiree. Every agent belongs to a
family, everyone is on the public network, and students and employees are
also on the network of their school or employer. Each day every agent is at
exactly one location: home, school, work or public. Agents who are not
infected follow their weekday/weekend routine. Infected agents keep to it
only with a role- and day-specific probability and otherwise stay home.
Transmission happens along edges of the network that matches the shared
location.

The per-agent state is (infection status, age, susceptibility). The online
parameter has 15 coordinates:

    p_r1, p_s1, p_s2, p_e1, p_e2   attendance while infected  (logit scale)
    rho                            susceptibility AR coefficient (atanh scale)
    nu                             treatment effect on susceptibility
    p_c                            contact probability (logit scale)
    vartheta_0 .. vartheta_6       infection logit coefficients

The initial-susceptibility regression (zeta_0, zeta_1) only shapes the first
state and is held fixed.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, fields, asdict
from weakref import WeakKeyDictionary

import numpy as np
from scipy import sparse
from scipy.special import expit, log_expit, logit

from .networks import complete_graph_edges, generate_network, small_network

log = logging.getLogger(__name__)

SUSCEPTIBLE, INFECTED, RECOVERED = 0, 1, 2
STUDENT, EMPLOYED, RETIRED = 0, 1, 2
HOME, SCHOOL, WORK, PUBLIC = 0, 1, 2, 3
LOCATIONS = ("home", "school", "work", "public")
SUSC_VAR = 0.25
LOG_2PI_VAR = math.log(2.0 * math.pi * SUSC_VAR)

ONLINE_NAMES = ("p_r1", "p_s1", "p_s2", "p_e1", "p_e2", "rho", "nu", "p_c",
                "vartheta0", "vartheta1", "vartheta2", "vartheta3", "vartheta4", "vartheta5", "vartheta6")
_LOGIT = {"p_r1", "p_s1", "p_s2", "p_e1", "p_e2", "p_c"}
_ATANH = {"rho"}


@dataclass(frozen=True)
class FluParameters:
    zeta0: float = 4.16
    zeta1: float = -0.119
    p_r1: float = 0.5
    p_s1: float = 0.5
    p_s2: float = 0.5
    p_e1: float = 0.5
    p_e2: float = 0.5
    rho: float = 0.8
    nu: float = -0.01
    p_c: float = 0.8
    vartheta0: float = -0.5
    vartheta1: float = -0.01
    vartheta2: float = 0.8
    vartheta3: float = -3.5
    vartheta4: float = -3.5
    vartheta5: float = -6.0
    vartheta6: float = -0.001

    def __post_init__(self):
        for name in _LOGIT:
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ValueError(f"{name} must lie in (0, 1), got {v}")
        if not -1.0 < self.rho < 1.0:
            raise ValueError(f"rho must lie in (-1, 1), got {self.rho}")

    @property
    def vartheta(self) -> np.ndarray:
        return np.array([getattr(self, f"vartheta{i}") for i in range(7)])

    def to_unconstrained(self) -> np.ndarray:
        """All 17 coordinates on R^17 (zeta first, then the online block)."""
        return np.concatenate([[self.zeta0, self.zeta1], online_unconstrained(self)])

    @classmethod
    def from_unconstrained(cls, x: np.ndarray) -> "FluParameters":
        x = np.asarray(x, dtype=float)
        return from_online(x[2:], x[0], x[1])


def _to_u(name, v):
    if name in _LOGIT:
        return float(logit(v))
    if name in _ATANH:
        return math.atanh(v)
    return float(v)


def _from_u(name, u):
    if name in _LOGIT:
        return float(expit(u))
    if name in _ATANH:
        return math.tanh(u)
    return float(u)


def online_unconstrained(p: FluParameters) -> np.ndarray:
    return np.array([_to_u(n, getattr(p, n)) for n in ONLINE_NAMES])


def from_online(theta: np.ndarray, zeta0: float = 4.16, zeta1: float = -0.119) -> FluParameters:
    vals = {n: _from_u(n, u) for n, u in zip(ONLINE_NAMES, np.asarray(theta, dtype=float))}
    # keep strict interior despite floating point saturation
    for n in _LOGIT:
        vals[n] = min(max(vals[n], 1e-15), 1.0 - 1e-15)
    vals["rho"] = min(max(vals["rho"], -1.0 + 1e-15), 1.0 - 1e-15)
    return FluParameters(zeta0=zeta0, zeta1=zeta1, **vals)


# population -----------------------------------------------------------------

def partition_families(L: int, rng: np.random.Generator, max_size: int = 15) -> np.ndarray:
    """Family id per agent. Sizes are drawn uniformly from ``1..max_size``
    until fewer than ``max_size + 1`` agents remain, and the last family
    takes the remainder. Agents are shuffled before assignment."""
    if L < 1:
        raise ValueError("population must be >= 1")
    sizes = []
    remaining = L
    while remaining > max_size:
        s = int(rng.integers(1, max_size + 1))
        sizes.append(s)
        remaining -= s
    if remaining > 0:
        sizes.append(remaining)
    ids = np.repeat(np.arange(len(sizes)), sizes)
    return ids[rng.permutation(L)]


@dataclass
class FluConfig:
    L: int = 1000
    network: str = "BA"
    ba_m: int = 4
    er_mean_degree: float = 8.0
    ws_k: int = 8
    ws_p: float = 0.1
    role_fractions: tuple = (0.25, 0.55, 0.20)
    agents_per_school: int = 500
    agents_per_employer: int = 50
    recovery_prob: float = 0.25
    treat_fraction: float = 0.2
    initial_infected_fraction: float = 0.1
    horizon: int = 20
    theta: dict = field(default_factory=dict)   # natural-scale overrides of FluParameters

    def parameters(self) -> FluParameters:
        return FluParameters(**self.theta)

    @property
    def budget(self) -> int:
        return int(math.floor(self.treat_fraction * self.L))

    @classmethod
    def from_dict(cls, d: dict) -> "FluConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown flu config keys: {sorted(unknown)}")
        d = dict(d)
        if "role_fractions" in d:
            d["role_fractions"] = tuple(d["role_fractions"])
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


class FluPopulation:
    """Static structure: roles, ages, families, institutions and edges.

    Edges of all networks are stored together. ``edge_type`` holds the
    location at which an edge can carry a contact (HOME for family edges).
    """

    def __init__(self, role: np.ndarray, age: np.ndarray, family: np.ndarray, institution: np.ndarray,
                 edges: np.ndarray, edge_type: np.ndarray):
        self.role = np.asarray(role, dtype=np.int8)
        self.age = np.asarray(age, dtype=float)
        self.family = np.asarray(family, dtype=np.int64)
        self.institution = np.asarray(institution, dtype=np.int64)
        self.edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        self.edge_type = np.asarray(edge_type, dtype=np.int8)
        self.L = self.role.size
        self.eu = self.edges[:, 0]
        self.ev = self.edges[:, 1]
        self.age_gap2 = (self.age[self.eu] - self.age[self.ev]) ** 2
        for arr in (self.role, self.age, self.family, self.institution, self.edges, self.edge_type):
            arr.setflags(write=False)
        self._routine_adj = {}

    def routine_adjacency(self, day: int) -> sparse.csr_matrix:
        """Symmetric 0/1 matrix of edges whose endpoints both follow their
        routine to the edge's location on this type of day."""
        wd = is_weekday(day)
        if wd not in self._routine_adj:
            normal = self.normal_location(day)
            ok = (normal[self.eu] == self.edge_type) & (normal[self.ev] == self.edge_type)
            u, v = self.eu[ok], self.ev[ok]
            A = sparse.coo_matrix((np.ones(2 * u.size), (np.concatenate([u, v]), np.concatenate([v, u]))),
                                  shape=(self.L, self.L)).tocsr()
            self._routine_adj[wd] = A
        return self._routine_adj[wd]

    @classmethod
    def build(cls, config: FluConfig, rng: np.random.Generator) -> "FluPopulation":
        L = config.L
        fr = np.asarray(config.role_fractions, dtype=float)
        fr = fr / fr.sum()
        n_st = int(math.floor(fr[0] * L))
        n_em = int(math.floor(fr[1] * L))
        role = np.full(L, RETIRED, dtype=np.int8)
        perm = rng.permutation(L)
        role[perm[:n_st]] = STUDENT
        role[perm[n_st:n_st + n_em]] = EMPLOYED
        age = np.empty(L)
        age[role == STUDENT] = rng.integers(0, 26, size=(role == STUDENT).sum())
        age[role == EMPLOYED] = rng.integers(15, 66, size=(role == EMPLOYED).sum())
        age[role == RETIRED] = rng.integers(50, 91, size=(role == RETIRED).sum())
        family = partition_families(L, rng)

        n_schools = max(1, L // config.agents_per_school)
        n_employers = max(1, L // config.agents_per_employer)
        institution = np.full(L, -1, dtype=np.int64)
        institution[role == STUDENT] = rng.integers(0, n_schools, size=(role == STUDENT).sum())
        institution[role == EMPLOYED] = rng.integers(0, n_employers, size=(role == EMPLOYED).sum())

        kw = dict(m=config.ba_m, k=config.ws_k, p_rewire=config.ws_p, mean_degree=config.er_mean_degree)
        blocks, types = [], []
        fam_order = np.argsort(family, kind="stable")
        bounds = np.flatnonzero(np.diff(family[fam_order])) + 1
        fam_edges = [complete_graph_edges(members) for members in np.split(fam_order, bounds)]
        blocks.append(np.concatenate(fam_edges) if fam_edges else np.zeros((0, 2), np.int64))
        types.append(HOME)
        for r, n_inst, loc in ((STUDENT, n_schools, SCHOOL), (EMPLOYED, n_employers, WORK)):
            parts = []
            for j in range(n_inst):
                members = np.flatnonzero((role == r) & (institution == j))
                local = small_network(config.network, members.size, rng, **kw)
                if local.size:
                    e = members[local]
                    e.sort(axis=1)
                    parts.append(e)
            blocks.append(np.concatenate(parts) if parts else np.zeros((0, 2), np.int64))
            types.append(loc)
        blocks.append(small_network(config.network, L, rng, **kw))
        types.append(PUBLIC)
        edges = np.concatenate(blocks)
        edge_type = np.concatenate([np.full(len(b), t, dtype=np.int8) for b, t in zip(blocks, types)])
        return cls(role, age, family, institution, edges, edge_type)

    def normal_location(self, day: int) -> np.ndarray:
        """Where each agent goes when not infected."""
        if is_weekday(day):
            loc = np.where(self.role == STUDENT, SCHOOL, np.where(self.role == EMPLOYED, WORK, PUBLIC))
        else:
            loc = np.full(self.L, PUBLIC)
        return loc.astype(np.int8)

    def attend_prob_infected(self, day: int, params: FluParameters) -> np.ndarray:
        """Probability that an infected agent keeps its routine today."""
        if is_weekday(day):
            p = np.where(self.role == STUDENT, params.p_s1, np.where(self.role == EMPLOYED, params.p_e1, params.p_r1))
        else:
            p = np.where(self.role == STUDENT, params.p_s2, np.where(self.role == EMPLOYED, params.p_e2, params.p_r1))
        return p.astype(float)

    def attend_param_index(self, day: int) -> np.ndarray:
        """Index into (p_r1, p_s1, p_s2, p_e1, p_e2) for each agent."""
        wd = is_weekday(day)
        return np.where(self.role == RETIRED, 0,
                        np.where(self.role == STUDENT, 1 if wd else 2, 3 if wd else 4)).astype(np.int64)


def is_weekday(day: int) -> bool:
    """Day 0 is a Monday."""
    return int(day) % 7 < 5


@dataclass(frozen=True, eq=False)
class FluState:
    """Population-wide state on one day.

    ``locations`` records where each agent was on the previous day, the day
    whose contacts produced this state. It is ``None`` for the first state.
    """

    status: np.ndarray
    susceptibility: np.ndarray
    day: int
    locations: np.ndarray | None = None

    def __post_init__(self):
        for a in (self.status, self.susceptibility, self.locations):
            if a is not None:
                a.setflags(write=False)

    @property
    def L(self) -> int:
        return self.status.size

    def counts(self) -> np.ndarray:
        return np.bincount(self.status, minlength=3)

    def to_json(self) -> str:
        import json
        return json.dumps({"status": self.status.tolist(), "susceptibility": self.susceptibility.tolist(),
                           "day": self.day,
                           "locations": None if self.locations is None else self.locations.tolist()})

    @classmethod
    def from_json(cls, text: str) -> "FluState":
        import json
        d = json.loads(text)
        return cls(np.array(d["status"], dtype=np.int8), np.array(d["susceptibility"], dtype=float), d["day"],
                   None if d["locations"] is None else np.array(d["locations"], dtype=np.int8))


def initial_state(pop: FluPopulation, params: FluParameters, config: FluConfig, rng: np.random.Generator,
                  n_infected: int | None = None) -> FluState:
    L = pop.L
    susc = params.zeta0 + params.zeta1 * pop.age + rng.standard_normal(L)
    if n_infected is None:
        n_infected = int(round(config.initial_infected_fraction * L))
    status = np.zeros(L, dtype=np.int8)
    status[rng.choice(L, size=n_infected, replace=False)] = INFECTED
    return FluState(status, susc, 0, None)


def fit_initial_susceptibility(age: np.ndarray, susceptibility: np.ndarray) -> tuple[float, float]:
    """Least-squares ``(zeta0, zeta1)`` from a cross-section of agents."""
    X = np.column_stack([np.ones_like(age), age])
    coef, *_ = np.linalg.lstsq(X, susceptibility, rcond=None)
    return float(coef[0]), float(coef[1])


# single-agent rules -----------------------------------------------------------

def daily_attendance(role: int, day: int, infected: bool, params: FluParameters, rng: np.random.Generator) -> int:
    """Location of one agent today (HOME, SCHOOL, WORK or PUBLIC)."""
    wd = is_weekday(day)
    if role == STUDENT:
        normal, p = (SCHOOL, params.p_s1) if wd else (PUBLIC, params.p_s2)
    elif role == EMPLOYED:
        normal, p = (WORK, params.p_e1) if wd else (PUBLIC, params.p_e2)
    else:
        normal, p = PUBLIC, params.p_r1
    if not infected:
        return normal
    return normal if rng.random() < p else HOME


def pair_linear_predictor(age_l, susc_l, a_l, a_i, age_i, vartheta):
    v = vartheta
    return (v[0] + v[1] * age_l + v[2] * susc_l + v[3] * a_l + v[4] * a_i + v[5] * a_i * a_l
            + v[6] * (age_l - age_i) ** 2)


def infection_probability(age_l: float, susc_l: float, a_l: int, contacts, params: FluParameters) -> float:
    """``1 - prod_i (1 - p_c expit(lin_i))`` over infected contacts.

    ``contacts`` is a sequence of ``(age_i, a_i)`` pairs.
    """
    surv = 1.0
    for age_i, a_i in contacts:
        lin = pair_linear_predictor(age_l, susc_l, a_l, a_i, age_i, params.vartheta)
        surv *= 1.0 - params.p_c * float(expit(lin))
    return 1.0 - surv


def susceptibility_step(s, a, params: FluParameters, rng: np.random.Generator | None = None, eps=None):
    """``rho s + nu a + noise`` with noise variance 0.25."""
    if eps is None:
        eps = math.sqrt(SUSC_VAR) * rng.standard_normal(np.shape(s))
    return params.rho * np.asarray(s) + params.nu * np.asarray(a) + eps


# batched dynamics -----------------------------------------------------------

def attendance_batch(pop: FluPopulation, status: np.ndarray, day: int, params: FluParameters,
                     u: np.ndarray) -> np.ndarray:
    """Locations for a batch of states ``status`` (R, L) given uniforms ``u``."""
    normal = pop.normal_location(day)
    p = pop.attend_prob_infected(day, params)
    stay_home = (status == INFECTED) & (u >= p)
    return np.where(stay_home, HOME, normal).astype(np.int8)


def active_pairs(pop: FluPopulation, status: np.ndarray, loc: np.ndarray):
    """Susceptible/infected pairs in contact.

    Both arguments are (R, L). Returns the arrays ``(r, sus, inf, e)``: batch
    row, susceptible agent, infected agent and edge index.
    """
    eu, ev, et = pop.eu, pop.ev, pop.edge_type
    su, sv = status[:, eu], status[:, ev]
    mixed = ((su == SUSCEPTIBLE) & (sv == INFECTED)) | ((su == INFECTED) & (sv == SUSCEPTIBLE))
    r, e = np.nonzero(mixed)
    keep = (loc[r, eu[e]] == et[e]) & (loc[r, ev[e]] == et[e])
    r, e = r[keep], e[keep]
    u_is_sus = status[r, eu[e]] == SUSCEPTIBLE
    sus = np.where(u_is_sus, eu[e], ev[e])
    inf = np.where(u_is_sus, ev[e], eu[e])
    return r, sus, inf, e


def pair_covariates(pop: FluPopulation, susc: np.ndarray, actions: np.ndarray, r, sus, inf, e) -> np.ndarray:
    """Design matrix (P, 7): 1, age, susceptibility, A_l, A_i, A_i A_l, age gap^2."""
    a_l = actions[r, sus].astype(float)
    a_i = actions[r, inf].astype(float)
    return np.column_stack([np.ones(r.size), pop.age[sus], susc[r, sus], a_l, a_i, a_l * a_i, pop.age_gap2[e]])


def log_no_infection(pop: FluPopulation, status, susc, actions, loc, params: FluParameters) -> np.ndarray:
    """(R, L) log-probability of escaping infection today (0 for agents without contacts)."""
    R, L = status.shape
    r, sus, inf, e = active_pairs(pop, status, loc)
    out = np.zeros(R * L)
    if r.size:
        X = pair_covariates(pop, susc, actions, r, sus, inf, e)
        q = params.p_c * expit(X @ params.vartheta)
        out += np.bincount(r * L + sus, weights=np.log1p(-q), minlength=R * L)
    return out.reshape(R, L)


def step_batch(pop: FluPopulation, status, susc, day: int, actions, params: FluParameters, recovery_prob: float,
               rng: np.random.Generator):
    """Advance a batch of populations one day.

    Returns ``(status', susc', locations, new_infections)``. Random draws
    are taken in a fixed order (attendance, infection, susceptibility noise,
    recovery), each over the whole (R, L) block.
    """
    status = np.atleast_2d(status)
    susc = np.atleast_2d(susc)
    actions = np.atleast_2d(actions)
    R, L = status.shape
    u_att = rng.random((R, L))
    u_inf = rng.random((R, L))
    eps = rng.standard_normal((R, L)) * math.sqrt(SUSC_VAR)
    u_rec = rng.random((R, L))

    loc = attendance_batch(pop, status, day, params, u_att)
    log_esc = log_no_infection(pop, status, susc, actions, loc, params)
    p_inf = -np.expm1(log_esc)
    new_inf = (status == SUSCEPTIBLE) & (u_inf < p_inf)
    recover = (status == INFECTED) & (u_rec < recovery_prob)
    nxt = status.copy()
    nxt[new_inf] = INFECTED
    nxt[recover] = RECOVERED
    susc_next = params.rho * susc + params.nu * actions + eps
    return nxt, susc_next, loc, new_inf.sum(axis=1)


# features and policies ---------------------------------------------------------

def contact_weights(pop: FluPopulation, status: np.ndarray, day: int, params: FluParameters) -> np.ndarray:
    """Estimated contact probability per edge for tomorrow's attendance, (R, E)."""
    normal = pop.normal_location(day)
    p = pop.attend_prob_infected(day, params)
    et = pop.edge_type
    # probability that each agent is at the location of each incident edge
    def at(nodes):
        st = status[:, nodes]
        at_normal = np.where(st == INFECTED, p[nodes], 1.0)
        prob = np.where(normal[nodes] == et, at_normal, 0.0)
        return prob + np.where(et == HOME, np.where(st == INFECTED, 1.0 - p[nodes], 0.0), 0.0)
    return at(pop.eu) * at(pop.ev)


def extract_features(pop: FluPopulation, status, susc, day: int, params: FluParameters) -> np.ndarray:
    """Feature array (R, L, 5): infected, susceptible, age, susceptibility and
    the expected number of contacts with agents of the opposite infection
    status.

    A susceptible agent always follows its routine, so on a mixed edge the
    contact probability is the infected endpoint's attendance probability
    when the edge's location is both endpoints' routine location, and 0
    otherwise. This equals the sum of :func:`contact_weights` over mixed
    edges, computed with one sparse product.
    """
    status = np.atleast_2d(status)
    susc = np.atleast_2d(susc)
    R, L = status.shape
    A = pop.routine_adjacency(day)
    inf = (status == INFECTED).astype(float)
    sus = (status == SUSCEPTIBLE).astype(float)
    p = pop.attend_prob_infected(day, params)
    inf_p = inf * p
    # A is symmetric: (X @ A) == (A @ X.T).T
    phi5 = sus * (A @ inf_p.T).T + inf_p * (A @ sus.T).T
    return np.stack([inf, sus, np.broadcast_to(pop.age, (R, L)), susc, phi5], axis=-1)


def contact_features_reference(pop: FluPopulation, status, day: int, params: FluParameters) -> np.ndarray:
    """Contact feature from per-edge co-attendance probabilities (slow path)."""
    status = np.atleast_2d(status)
    R, L = status.shape
    w = contact_weights(pop, status, day, params)
    su, sv = status[:, pop.eu], status[:, pop.ev]
    mixed = ((su == SUSCEPTIBLE) & (sv == INFECTED)) | ((su == INFECTED) & (sv == SUSCEPTIBLE))
    w = np.where(mixed, w, 0.0)
    offs = (np.arange(R) * L)[:, None]
    return (np.bincount((offs + pop.eu).ravel(), weights=w.ravel(), minlength=R * L)
            + np.bincount((offs + pop.ev).ravel(), weights=w.ravel(), minlength=R * L)).reshape(R, L)


def top_m(scores: np.ndarray, M: int, rng: np.random.Generator) -> np.ndarray:
    """0/1 array (R, L) marking the M highest scores per row; ties at the
    cut-off are broken uniformly at random."""
    scores = np.atleast_2d(scores)
    R, L = scores.shape
    out = np.zeros((R, L), dtype=np.int8)
    M = min(int(M), L)
    if M <= 0:
        return out
    u = rng.random((R, L))
    if M == L:
        out[:] = 1
        return out
    thresh = np.partition(scores, L - M, axis=1)[:, L - M]
    for r in range(R):
        above = scores[r] > thresh[r]
        out[r, above] = 1
        need = M - int(above.sum())
        ties = np.flatnonzero(scores[r] == thresh[r])
        if need == ties.size:
            out[r, ties] = 1
        else:
            out[r, ties[np.argpartition(u[r, ties], need - 1)[:need]]] = 1
    return out


class PriorityPolicy:
    """Treat the ``budget`` agents with the largest ``features @ eta``.

    The contact feature uses the attendance probabilities in ``params``,
    normally the sampled parameter of the current epoch.
    """

    def __init__(self, eta, budget: int, pop: FluPopulation, params: FluParameters):
        self.eta = np.asarray(eta, dtype=float)
        if self.eta.shape != (5,):
            raise ValueError("eta must have length 5")
        self.budget = int(budget)
        self.pop = pop
        self.params = params

    def act_batch(self, states, rng):
        status, susc, day = states
        phi = extract_features(self.pop, status, susc, day, self.params)
        return top_m(phi @ self.eta, self.budget, rng)

    def act(self, state: FluState, rng) -> np.ndarray:
        return self.act_batch((state.status[None], state.susceptibility[None], state.day), rng)[0]

    def __repr__(self):
        return f"PriorityPolicy(eta={np.round(self.eta, 4).tolist()}, M={self.budget})"


class PriorityPolicyClass:
    """Policies indexed by eta; binds the sampled parameter before search."""

    # search-space scaling: age spans ~0-90, susceptibility has sd ~3
    SCALE = np.array([1.0, 1.0, 0.02, 0.3, 1.0])

    def __init__(self, model: "FluModel", budget: int, initial=None):
        self.model = model
        self.budget = budget
        self.initial = None if initial is None else np.asarray(initial, dtype=float)

    def bind(self, theta):
        from ..policy_eval import ParametricPolicyClass
        params = self.model.params_from(theta)
        return ParametricPolicyClass(lambda eta: PriorityPolicy(eta, self.budget, self.model.pop, params),
                                     dim=5, scale=self.SCALE, initial=self.initial)


def _infection_loglik(c: "_Compiled", params: FluParameters, want_grad: bool):
    """Infection part of the log-density, and per-pair ``d ll / d log q``.

    An agent escapes with probability ``exp(-S)``, ``S = -sum log(1 - q_j)``
    over its infectious pairs. ``log(1 - exp(-S))`` is formed from ``log S``
    so that tiny per-contact probabilities do not underflow to ``log 0``.
    """
    z = c.X @ params.vartheta
    lq = math.log(params.p_c) + log_expit(z)
    q = np.exp(lq)
    y = c.y > 0
    n = c.y.size
    # log(-log1p(-q)) = log q + log1p(q/2 + ...), exact branch away from 0
    with np.errstate(divide="ignore"):
        lh = np.where(q > 1e-8, np.log(-np.log1p(-q)), lq + 0.5 * q)
    top = np.full(n, -np.inf)
    np.maximum.at(top, c.group, lh)
    safe = np.where(np.isfinite(top), top, 0.0)
    log_s = safe + np.log(np.bincount(c.group, weights=np.exp(lh - safe[c.group]), minlength=n))
    S = np.exp(log_s)
    with np.errstate(divide="ignore", invalid="ignore"):
        log_p = np.where(S < 1e-5, log_s - 0.5 * S, np.log(-np.expm1(-S)))
        ll = float(np.sum(np.where(y, log_p, -S)))
    if not want_grad:
        return ll, None
    # S / expm1(S), with its limit 1 at S = 0
    with np.errstate(divide="ignore", invalid="ignore"):
        A = np.where(S < 1e-8, 1.0 - 0.5 * S, S / np.expm1(S))
        w = A[c.group] * np.exp(lq - log_s[c.group])
    cq = np.where(y[c.group], w, -q) / (1.0 - q)
    return ll, cq


# model --------------------------------------------------------------------

@dataclass
class _Compiled:
    att_k: np.ndarray        # successes per attendance parameter (5,)
    att_n: np.ndarray        # trials (5,)
    s_prev: np.ndarray
    a: np.ndarray
    s_next: np.ndarray
    X: np.ndarray            # pair covariates (P, 7)
    group: np.ndarray        # pair -> susceptible slot
    y: np.ndarray            # infection outcome per slot
    possible: bool


class FluModel:
    """Dynamics model over :class:`FluState` with the 15 online parameters."""

    n_params = len(ONLINE_NAMES)

    def __init__(self, pop: FluPopulation, recovery_prob: float = 0.25, zeta=(4.16, -0.119)):
        self.pop = pop
        self.recovery_prob = float(recovery_prob)
        self.zeta = tuple(zeta)
        self._compiled: WeakKeyDictionary = WeakKeyDictionary()
        self._concat_key = None
        self._concat = None
        self.impossible_transitions = 0

    # parameter maps
    def params_from(self, theta) -> FluParameters:
        return from_online(theta, *self.zeta)

    def to_natural(self, theta) -> FluParameters:
        return self.params_from(theta)

    def to_unconstrained(self, natural: FluParameters) -> np.ndarray:
        return online_unconstrained(natural)

    # simulation
    def step(self, state: FluState, actions, theta, rng):
        """Returns ``(next_state, utility, new_infections)``."""
        params = self.params_from(theta)
        a = np.asarray(actions, dtype=np.int8)
        if a.shape != (self.pop.L,):
            raise ValueError(f"action vector must have length {self.pop.L}")
        st, su, loc, new = step_batch(self.pop, state.status[None], state.susceptibility[None], state.day,
                                      a[None], params, self.recovery_prob, rng)
        nxt = FluState(st[0].astype(np.int8), su[0], state.day + 1, loc[0])
        n_new = int(new[0])
        return nxt, -n_new / self.pop.L, n_new

    def sample_transition(self, state, action, theta, rng):
        nxt, u, _ = self.step(state, action, theta, rng)
        return nxt, u

    def simulate_returns(self, start: FluState, policy, theta, horizon, n, gamma, rng):
        params = self.params_from(theta)
        status = np.repeat(start.status[None], n, axis=0)
        susc = np.repeat(start.susceptibility[None], n, axis=0)
        day = start.day
        out = np.zeros(n)
        disc = 1.0
        for _ in range(horizon):
            acts = policy.act_batch((status, susc, day), rng)
            status, susc, _, new = step_batch(self.pop, status, susc, day, acts, params, self.recovery_prob, rng)
            out -= disc * new / self.pop.L
            day += 1
            disc *= gamma
        return out

    # likelihood
    def compile_transition(self, state: FluState, actions, next_state: FluState) -> _Compiled:
        cached = self._compiled.get(next_state)
        if cached is not None and cached[0] is state and cached[1] is actions:
            return cached[2]
        pop = self.pop
        s0, s1 = state.status, next_state.status
        a = np.asarray(actions, dtype=float)
        loc = next_state.locations
        possible = True
        ok = ((s0 == s1) | ((s0 == SUSCEPTIBLE) & (s1 == INFECTED)) | ((s0 == INFECTED) & (s1 == RECOVERED)))
        if loc is None or not ok.all():
            possible = False
            loc = pop.normal_location(state.day) if loc is None else loc
        normal = pop.normal_location(state.day)
        inf0 = s0 == INFECTED
        if np.any(~inf0 & (loc != normal)) or np.any(inf0 & (loc != normal) & (loc != HOME)):
            possible = False
        idx = pop.attend_param_index(state.day)[inf0]
        went = (loc[inf0] != HOME).astype(float)
        att_k = np.bincount(idx, weights=went, minlength=5)
        att_n = np.bincount(idx, minlength=5).astype(float)

        r, sus, inf, e = active_pairs(pop, s0[None], loc[None])
        slots, group = np.unique(sus, return_inverse=True)
        X = pair_covariates(pop, state.susceptibility[None], a[None], r, sus, inf, e)
        y = (s1[slots] == INFECTED).astype(float)
        newly = (s0 == SUSCEPTIBLE) & (s1 == INFECTED)
        if newly.sum() != y.sum():
            possible = False   # infection without any infectious contact
        comp = _Compiled(att_k, att_n, state.susceptibility.copy(), a, next_state.susceptibility.copy(), X,
                         group.astype(np.int64), y, possible)
        if not possible:
            self.impossible_transitions += 1
            log.warning("impossible flu transition at day %d", state.day)
        self._compiled[next_state] = (state, actions, comp)
        return comp

    def _concat_transitions(self, transitions):
        key = tuple(id(t[2]) for t in transitions)
        if key == self._concat_key:
            return self._concat
        comps = [self.compile_transition(s, a, s2) for s, a, s2 in transitions]
        offs = np.cumsum([0] + [c.y.size for c in comps[:-1]])
        cat = _Compiled(
            att_k=np.sum([c.att_k for c in comps], axis=0),
            att_n=np.sum([c.att_n for c in comps], axis=0),
            s_prev=np.concatenate([c.s_prev for c in comps]),
            a=np.concatenate([c.a for c in comps]),
            s_next=np.concatenate([c.s_next for c in comps]),
            X=np.concatenate([c.X for c in comps]),
            group=np.concatenate([c.group + o for c, o in zip(comps, offs)]),
            y=np.concatenate([c.y for c in comps]),
            possible=all(c.possible for c in comps),
        )
        self._concat_key, self._concat = key, cat
        return cat

    @staticmethod
    def _components(c: _Compiled, params: FluParameters) -> dict:
        p_att = np.array([params.p_r1, params.p_s1, params.p_s2, params.p_e1, params.p_e2])
        out = {"attendance": float(np.sum(c.att_k * np.log(p_att) + (c.att_n - c.att_k) * np.log1p(-p_att)))}
        resid = c.s_next - params.rho * c.s_prev - params.nu * c.a
        out["susceptibility"] = float(-0.5 * (c.s_prev.size * LOG_2PI_VAR + (resid ** 2).sum() / SUSC_VAR))
        out["infection"] = _infection_loglik(c, params, False)[0] if c.y.size else 0.0
        return out

    @staticmethod
    def _loglik(c: _Compiled, params: FluParameters, want_grad: bool):
        if not c.possible:
            return -math.inf, None
        p_att = np.array([params.p_r1, params.p_s1, params.p_s2, params.p_e1, params.p_e2])
        ll = float(np.sum(c.att_k * np.log(p_att) + (c.att_n - c.att_k) * np.log1p(-p_att)))
        resid = c.s_next - params.rho * c.s_prev - params.nu * c.a
        ll += float(-0.5 * (c.s_prev.size * LOG_2PI_VAR + (resid ** 2).sum() / SUSC_VAR))
        if c.y.size:
            ll_inf, cq = _infection_loglik(c, params, want_grad)
            ll += ll_inf
        if not want_grad:
            return ll, None
        g = np.zeros(len(ONLINE_NAMES))
        g[:5] = c.att_k - c.att_n * p_att
        g[5] = float((resid * c.s_prev).sum() / SUSC_VAR) * (1.0 - params.rho ** 2)
        g[6] = float((resid * c.a).sum() / SUSC_VAR)
        if c.y.size:
            z = c.X @ params.vartheta
            g[7] = float(cq.sum()) * (1.0 - params.p_c)
            g[8:] = c.X.T @ (cq * expit(-z))
        return ll, g

    def log_density(self, next_state: FluState, state: FluState, actions, theta) -> float:
        c = self.compile_transition(state, actions, next_state)
        return self._loglik(c, self.params_from(theta), False)[0]

    def log_density_components(self, next_state: FluState, state: FluState, actions, theta) -> dict:
        """Attendance, susceptibility and infection parts of :meth:`log_density`.

        Agents who are not infected attend deterministically and add nothing
        to the attendance part. An impossible transition gives ``-inf`` in
        every part.
        """
        c = self.compile_transition(state, actions, next_state)
        if not c.possible:
            return {"attendance": -math.inf, "susceptibility": -math.inf, "infection": -math.inf}
        return self._components(c, self.params_from(theta))

    def log_likelihood_batch(self, transitions, theta) -> float:
        return self._loglik(self._concat_transitions(transitions), self.params_from(theta), False)[0]

    def log_likelihood_grad_batch(self, transitions, theta) -> np.ndarray:
        ll, g = self._loglik(self._concat_transitions(transitions), self.params_from(theta), True)
        if g is None:
            return np.full(len(ONLINE_NAMES), np.nan)
        return g


def build_environment(config: FluConfig, rng: np.random.Generator) -> tuple[FluModel, FluState, np.ndarray]:
    """Population, model, first state and the true online parameter."""
    params = config.parameters()
    pop = FluPopulation.build(config, rng)
    model = FluModel(pop, config.recovery_prob, (params.zeta0, params.zeta1))
    s0 = initial_state(pop, params, config, rng)
    return model, s0, online_unconstrained(params)


def ever_infected(state: FluState) -> float:
    return float(np.mean(state.status != SUSCEPTIBLE))


def infected_now(state: FluState) -> float:
    return float(np.mean(state.status == INFECTED))


STATE_COLUMNS = ("agent", "status", "age", "susceptibility", "role", "family", "institution")


def write_state_csv(path, pop: FluPopulation, state: FluState) -> None:
    """One row per agent. ``institution`` is -1 for retirees."""
    import csv
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(STATE_COLUMNS)
        for l in range(pop.L):
            w.writerow([l, int(state.status[l]), repr(float(pop.age[l])), repr(float(state.susceptibility[l])),
                        int(pop.role[l]), int(pop.family[l]), int(pop.institution[l])])


def read_state_csv(path, day: int = 0) -> tuple[FluState, dict]:
    """Inverse of :func:`write_state_csv`. Returns the state and the static
    columns (age, role, family, institution) as arrays."""
    import csv
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    rows.sort(key=lambda r: int(r["agent"]))
    state = FluState(np.array([int(r["status"]) for r in rows], dtype=np.int8),
                     np.array([float(r["susceptibility"]) for r in rows]), day)
    static = {"age": np.array([float(r["age"]) for r in rows]),
              "role": np.array([int(r["role"]) for r in rows], dtype=np.int8),
              "family": np.array([int(r["family"]) for r in rows], dtype=np.int64),
              "institution": np.array([int(r["institution"]) for r in rows], dtype=np.int64)}
    return state, static
