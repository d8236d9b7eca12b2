"""Random tracking instances and their JSON files."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..heat import FemOperators, HeatProblem, SpaceGrid, SpaceTimeField, solve_state
from ..timegrid import PiecewiseConstantFn, TemporalGrid

FORMAT_VERSION = 1
GENERATION_CELLS = 320
SPACE_CELLS = 64


@dataclass
class Instance:
    """Desired state generated from a random switching control.

    ``jump_nodes`` are indices of interior nodes of the uniform generation
    grid where the generating control toggles, starting from 0.
    """

    theta: int
    seed: int
    jump_nodes: tuple
    y_d: SpaceTimeField
    generation_cells: int = GENERATION_CELLS
    space_cells: int = SPACE_CELLS
    horizon: float = 1.0

    @property
    def generation_grid(self) -> TemporalGrid:
        return TemporalGrid.uniform(self.generation_cells, self.horizon)

    def u_d(self) -> PiecewiseConstantFn:
        return generating_control(self.generation_grid, self.jump_nodes)

    def operators(self) -> FemOperators:
        return FemOperators.build(SpaceGrid(self.space_cells))

    def problem(self, alpha: float = 0.005) -> HeatProblem:
        return HeatProblem(self.operators(), self.y_d, alpha)

    def to_dict(self) -> dict:
        return {
            "format": FORMAT_VERSION,
            "theta": self.theta,
            "seed": self.seed,
            "horizon": self.horizon,
            "generation_cells": self.generation_cells,
            "space_cells": self.space_cells,
            "form_function": "exp(x)*sin(pi*x)+0.5",
            "y0": "zero",
            "jump_nodes": [int(k) for k in self.jump_nodes],
            "y_d": self.y_d.values.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Instance":
        if d.get("format") != FORMAT_VERSION:
            raise ValueError(f"unsupported instance format {d.get('format')!r}")
        grid = TemporalGrid.uniform(d["generation_cells"], d["horizon"])
        y_d = SpaceTimeField(grid, np.array(d["y_d"], dtype=float))
        return cls(d["theta"], d["seed"], tuple(d["jump_nodes"]), y_d, d["generation_cells"], d["space_cells"], d["horizon"])

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "Instance":
        return cls.from_dict(json.loads(Path(path).read_text()))


def generating_control(grid: TemporalGrid, jump_nodes) -> PiecewiseConstantFn:
    """Binary control starting at 0 and toggling at the given node indices."""
    toggles = np.zeros(grid.n_cells, dtype=int)
    for k in jump_nodes:
        toggles[k] += 1
    return PiecewiseConstantFn(grid, (np.cumsum(toggles) % 2).astype(float))


def generate(
    theta: int,
    seed: int,
    generation_cells: int = GENERATION_CELLS,
    space_cells: int = SPACE_CELLS,
    horizon: float = 1.0,
    allow_zero: bool = False,
) -> Instance:
    """Draw ``theta`` distinct interior jump nodes and compute the desired state."""
    n_interior = generation_cells - 1
    lo = 0 if allow_zero else 1
    if not lo <= theta <= n_interior - 1:
        raise ValueError(f"theta must lie in [{lo}, {n_interior - 1}], got {theta}")
    rng = np.random.default_rng(seed)
    nodes = np.sort(rng.choice(np.arange(1, generation_cells), size=theta, replace=False))
    grid = TemporalGrid.uniform(generation_cells, horizon)
    ops = FemOperators.build(SpaceGrid(space_cells))
    y_d = solve_state(generating_control(grid, nodes), None, ops)
    return Instance(theta, seed, tuple(int(k) for k in nodes), y_d, generation_cells, space_cells, horizon)
