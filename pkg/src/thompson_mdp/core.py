"""Abstractions shared by every environment: histories, models, policies.

A dynamics model works on the *unconstrained* parameter scale (a plain
``numpy`` vector in R^q).  Each model owns a bijection to its natural scale
(probabilities, autoregressive coefficients, ...), so the Thompson engine
never has to project parameter draws.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from typing import Any, Callable, Iterator, Protocol, Sequence, runtime_checkable

import numpy as np


class BoundViolationError(ValueError):
    """A utility fell outside [-1, 1]."""


class InsufficientDataError(ValueError):
    """Not enough observed transitions for the requested computation."""


class EstimationError(RuntimeError):
    """Likelihood fitting or information-matrix inversion failed."""


class NumericError(RuntimeError):
    """A matrix that must be positive semidefinite is not."""


class ImpossibleTransitionError(ValueError):
    """A transition that has zero density under every parameter value."""


@runtime_checkable
class DynamicsModel(Protocol):
    """What the engine needs from an environment model.

    ``theta`` is always the unconstrained parameter vector of length
    ``n_params``.
    """

    n_params: int

    def sample_transition(self, state, action, theta: np.ndarray, rng: np.random.Generator) -> tuple[Any, float]:
        ...

    def log_density(self, next_state, state, action, theta: np.ndarray) -> float:
        ...

    def to_natural(self, theta: np.ndarray) -> Any:
        ...

    def to_unconstrained(self, natural) -> np.ndarray:
        ...


@runtime_checkable
class Policy(Protocol):
    def act(self, state, rng: np.random.Generator | None = None):
        ...


@dataclass(frozen=True)
class Record:
    state: Any
    action: Any
    utility: float


class History:
    """Append-only record of ``(state, action, utility)`` triples.

    Record ``v`` holds S^v, A^v and U^v; the transition density for S^v
    conditions on record ``v - 1``.  The most recently observed state, which
    has no action yet, is passed separately where needed (``next_state``).
    """

    def __init__(self, records: Sequence[Record] = (), gaps=()):
        self._records: list[Record] = list(records)
        self._gaps: set[int] = set(gaps)

    def __len__(self) -> int:
        return len(self._records)

    def __getitem__(self, i) -> Record:
        return self._records[i]

    def __iter__(self) -> Iterator[Record]:
        return iter(self._records)

    @property
    def records(self) -> tuple[Record, ...]:
        return tuple(self._records)

    def append(self, state, action, utility: float) -> "History":
        u = float(utility)
        if not math.isfinite(u) or abs(u) > 1.0:
            raise BoundViolationError(f"utility {u!r} outside [-1, 1]")
        self._records.append(Record(state, action, u))
        return self

    def copy(self) -> "History":
        return History(self._records, self._gaps)

    def mark_gap(self) -> "History":
        """Declare the transition out of the last record unobserved, e.g.
        between a historical record and a restart at a chosen state."""
        self._gaps.add(len(self._records))
        return self

    @property
    def gaps(self) -> frozenset[int]:
        return frozenset(self._gaps)

    def transitions(self, next_state=None) -> list[tuple[Any, Any, Any]]:
        """Consecutive ``(state, action, next_state)`` triples.

        If ``next_state`` is given it closes the transition out of the last
        record. Transitions across a gap are skipped.
        """
        recs = self._records
        out = [(recs[v - 1].state, recs[v - 1].action, recs[v].state) for v in range(1, len(recs))
               if v not in self._gaps]
        if next_state is not None and recs and len(recs) not in self._gaps:
            out.append((recs[-1].state, recs[-1].action, next_state))
        return out

    # persistence -----------------------------------------------------------

    def to_csv(self, path, encode_state: Callable = json.dumps, encode_action: Callable = json.dumps) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "state", "action", "utility"])
            for t, rec in enumerate(self._records, start=1):
                w.writerow([t, encode_state(rec.state), encode_action(rec.action), repr(rec.utility)])

    @classmethod
    def from_csv(cls, path, decode_state: Callable = json.loads, decode_action: Callable = json.loads) -> "History":
        hist = cls()
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                hist.append(decode_state(row["state"]), decode_action(row["action"]), float(row["utility"]))
        return hist


def append_record(history: History, state, action, utility: float) -> History:
    """Append one decision epoch to ``history`` (rejects |utility| > 1)."""
    return history.append(state, action, utility)


def log_likelihood(history: History, model, theta: np.ndarray, next_state=None) -> float:
    """Sum of transition log-densities over the history.

    The initial-state density and the action-selection probabilities carry no
    information about ``theta`` and are dropped.
    """
    trans = history.transitions(next_state)
    if not trans:
        raise InsufficientDataError("log-likelihood needs at least two observed states")
    theta = np.asarray(theta, dtype=float)
    batch = getattr(model, "log_likelihood_batch", None)
    if batch is not None:
        return float(batch(trans, theta))
    total = 0.0
    for s, a, s_next in trans:
        total += model.log_density(s_next, s, a, theta)
    return float(total)


def log_likelihood_grad(history: History, model, theta: np.ndarray, next_state=None) -> np.ndarray | None:
    """Analytic gradient of :func:`log_likelihood` when the model provides one."""
    grad = getattr(model, "log_likelihood_grad_batch", None)
    if grad is None:
        return None
    trans = history.transitions(next_state)
    if not trans:
        raise InsufficientDataError("log-likelihood needs at least two observed states")
    return np.asarray(grad(trans, np.asarray(theta, dtype=float)), dtype=float)
