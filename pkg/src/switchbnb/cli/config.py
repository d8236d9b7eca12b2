"""Plain-text ``key = value`` batch configuration.

Lines starting with ``#`` are comments. List-valued keys take comma
separated values; an empty value gives an empty list.

Keys
----
theta, sigma, dwell, seeds : lists of jump counts, switching budgets,
    dwell times and seeds. Each (theta, constraint, seed) combination is
    one run, where the constraints are all ``sigma`` and all ``dwell`` values.
tol, red, alpha, beta, gamma, grid_init, max_refine, threads, max_nodes,
    max_cuts_per_node : solver settings shared by all runs.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, fields
from pathlib import Path

LIST_KEYS = {"theta": int, "sigma": int, "dwell": float, "seeds": int}


@dataclass
class SolverSettings:
    tol: float = 0.02
    red: float = 0.02
    alpha: float = 0.005
    beta: float = 0.005
    gamma: float = 0.5
    grid_init: int = 20
    max_refine: int = 8
    threads: int = 1
    max_nodes: int = 10_000
    max_cuts_per_node: int = 50


@dataclass
class BatchConfig:
    theta: list = field(default_factory=list)
    sigma: list = field(default_factory=list)
    dwell: list = field(default_factory=list)
    seeds: list = field(default_factory=list)
    settings: SolverSettings = field(default_factory=SolverSettings)

    def runs(self) -> list:
        """``(theta, kind, value, seed)`` tuples with kind ``"sigma"`` or ``"dwell"``."""
        cons = [("sigma", s) for s in self.sigma] + [("dwell", s) for s in self.dwell]
        return [(t, k, v, s) for t, (k, v), s in itertools.product(self.theta, cons, self.seeds)]


def parse_config(text: str) -> BatchConfig:
    cfg = BatchConfig()
    types = {f.name: f.type for f in fields(SolverSettings)}
    casts = {"float": float, "int": int}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key = value")
        key, value = (p.strip() for p in line.split("=", 1))
        if key in LIST_KEYS:
            items = [x.strip() for x in value.split(",") if x.strip()]
            setattr(cfg, key, [LIST_KEYS[key](x) for x in items])
        elif key in types:
            setattr(cfg.settings, key, casts[types[key]](value))
        else:
            raise ValueError(f"line {lineno}: unknown key {key!r}")
    return cfg


def load_config(path) -> BatchConfig:
    return parse_config(Path(path).read_text())
