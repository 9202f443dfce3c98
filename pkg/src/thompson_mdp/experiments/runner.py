"""Seeded replication runner and table output.

Replicate ``i`` of an experiment draws all of its randomness from
``stream(master_seed, i, tag(purpose), ...)``. Adding a new purpose tag
leaves every existing draw unchanged.
"""
from __future__ import annotations

import csv
import json
import logging
import math
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

log = logging.getLogger(__name__)

KINDS = ("flu", "mallard", "regret-curve", "radius")


@dataclass
class ExperimentConfig:
    kind: str
    replications: int = 1
    master_seed: int = 0
    environment: dict = field(default_factory=dict)
    engine: dict = field(default_factory=dict)
    options: dict = field(default_factory=dict)
    output: str | None = None
    threads: int = 1

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown experiment kind {self.kind!r}; expected one of {KINDS}")
        if self.replications < 1:
            raise ValueError("replications must be >= 1")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {"kind", "replications", "master_seed", "environment", "engine", "options", "output", "threads"}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@dataclass
class ReplicationResult:
    rows: list[dict]
    failures: list[tuple[int, str]]

    @property
    def ok(self) -> bool:
        return not self.failures


def _run_one(fn, config, rep):
    try:
        rows = fn(config, rep)
        return rep, rows, None
    except Exception as exc:  # recorded, the run goes on
        return rep, [], f"{type(exc).__name__}: {exc}\n{traceback.format_exc(limit=3)}"


def run_replications(config: ExperimentConfig, replicate: Callable[[ExperimentConfig, int], list[dict]]
                     ) -> ReplicationResult:
    """Run ``replicate(config, i)`` for every replicate index.

    Each call returns a list of row dicts and must derive its own streams
    from ``(config.master_seed, i)``. Rows are collected in replicate order
    whatever the number of worker processes. A failing replicate is logged
    and recorded, and the others still run.
    """
    reps = range(config.replications)
    if config.threads > 1 and config.replications > 1:
        with ProcessPoolExecutor(max_workers=config.threads) as pool:
            outs = list(pool.map(_run_one, [replicate] * len(reps), [config] * len(reps), reps))
    else:
        outs = [_run_one(replicate, config, r) for r in reps]
    rows, failures = [], []
    for rep, r_rows, err in outs:
        if err is not None:
            log.error("replicate %d failed: %s", rep, err.splitlines()[0])
            failures.append((rep, err))
            continue
        for row in r_rows:
            rows.append({"replicate": rep, **row})
    return ReplicationResult(rows, failures)


def mean_se(values) -> tuple[float, float]:
    x = np.asarray(values, dtype=float)
    if x.size == 0:
        return math.nan, math.nan
    se = float(x.std(ddof=1) / math.sqrt(x.size)) if x.size > 1 else 0.0
    return float(x.mean()), se


def format_mean_se(mean: float, se: float, digits: int = 3) -> str:
    return f"{mean:.{digits}f} ({se:.{digits}f})"


def aggregate(rows: list[dict], keys: list[str], values: list[str], digits: int = 3) -> list[dict]:
    """Group rows by ``keys`` and summarize each value column as mean and
    standard error across replicates. Groups keep first-seen order."""
    groups: dict[tuple, list[dict]] = {}
    for r in rows:
        groups.setdefault(tuple(r[k] for k in keys), []).append(r)
    out = []
    for gk, rs in groups.items():
        row = dict(zip(keys, gk))
        row["n"] = len(rs)
        for v in values:
            m, se = mean_se([r[v] for r in rs])
            row[f"{v}_mean"] = m
            row[f"{v}_se"] = se
            row[v] = format_mean_se(m, se, digits)
        out.append(row)
    return out


def _cell(v):
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, np.floating):
        return repr(float(v))
    return v


def write_rows(path, rows: list[dict]) -> None:
    if not rows:
        with open(path, "w", newline="") as fh:
            fh.write("")
        return
    cols = list(rows[0])
    for r in rows[1:]:
        cols.extend(c for c in r if c not in cols)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols)
        w.writeheader()
        for r in rows:
            w.writerow({k: _cell(v) for k, v in r.items()})


def summary_path(path: str) -> str:
    stem, dot, ext = path.rpartition(".")
    return f"{stem}_summary.{ext}" if dot else f"{path}_summary"
