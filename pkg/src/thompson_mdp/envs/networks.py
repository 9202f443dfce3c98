"""Random contact-network generators returning undirected edge arrays.

Edges come back as an ``(E, 2)`` int array with ``u < v``. There are no
self-loops and no duplicate edges. Graph construction uses networkx.
"""
from __future__ import annotations

import networkx as nx
import numpy as np

KINDS = ("BA", "ER", "WS")


class NetworkParameterError(ValueError):
    pass


def _edges(g: nx.Graph) -> np.ndarray:
    if g.number_of_edges() == 0:
        return np.zeros((0, 2), dtype=np.int64)
    e = np.array(g.edges(), dtype=np.int64)
    e.sort(axis=1)
    return np.unique(e, axis=0)


def generate_network(kind: str, n: int, rng: np.random.Generator, *, m: int = 4, p: float | None = None,
                     k: int = 8, p_rewire: float = 0.1, mean_degree: float = 8.0) -> np.ndarray:
    """Edges of one network on nodes ``0..n-1``.

    BA: preferential attachment with ``m`` edges per arriving node.
    ER: each pair independently with probability ``p``; the default is
    ``mean_degree / (n - 1)``.
    WS: ring lattice of degree ``k``, rewired with probability ``p_rewire``.
    """
    kind = kind.upper()
    if n < 1:
        raise NetworkParameterError("network size must be >= 1")
    seed = int(rng.integers(0, 2**32 - 1))
    if kind == "BA":
        if not 1 <= m < n:
            raise NetworkParameterError(f"BA needs 1 <= m < n (m={m}, n={n})")
        g = nx.barabasi_albert_graph(n, m, seed=seed)
    elif kind == "ER":
        if p is None:
            p = min(1.0, mean_degree / (n - 1)) if n > 1 else 0.0
        if not 0.0 <= p <= 1.0:
            raise NetworkParameterError(f"ER edge probability must be in [0, 1], got {p}")
        g = nx.gnp_random_graph(n, p, seed=seed) if p > 0.2 else nx.fast_gnp_random_graph(n, p, seed=seed)
    elif kind == "WS":
        if not 0 <= k < n:
            raise NetworkParameterError(f"WS needs k < n (k={k}, n={n})")
        if not 0.0 <= p_rewire <= 1.0:
            raise NetworkParameterError("rewiring probability must be in [0, 1]")
        g = nx.watts_strogatz_graph(n, k, p_rewire, seed=seed)
    else:
        raise NetworkParameterError(f"unknown network kind {kind!r}; expected one of {KINDS}")
    return _edges(g)


def small_network(kind: str, n: int, rng: np.random.Generator, *, m: int = 4, k: int = 8,
                  p_rewire: float = 0.1, mean_degree: float = 8.0) -> np.ndarray:
    """Like :func:`generate_network`, with parameters shrunk to fit a small
    group (schools and employers can have only a handful of members)."""
    if n < 2:
        return np.zeros((0, 2), dtype=np.int64)
    kind = kind.upper()
    if kind == "BA":
        return generate_network("BA", n, rng, m=min(m, n - 1))
    if kind == "WS":
        kk = min(k, n - 1)
        kk -= kk % 2
        if kk < 2:
            return complete_graph_edges(np.arange(n))
        return generate_network("WS", n, rng, k=kk, p_rewire=p_rewire)
    return generate_network(kind, n, rng, mean_degree=mean_degree)


def complete_graph_edges(nodes: np.ndarray) -> np.ndarray:
    nodes = np.asarray(nodes, dtype=np.int64)
    if nodes.size < 2:
        return np.zeros((0, 2), dtype=np.int64)
    iu, ju = np.triu_indices(nodes.size, k=1)
    e = np.stack([nodes[iu], nodes[ju]], axis=1)
    e.sort(axis=1)
    return e


def degrees(edges: np.ndarray, n: int) -> np.ndarray:
    return np.bincount(edges.ravel(), minlength=n)
