"""Combinatorial integral approximation: the binary control closest to a relaxed one in L1."""

from __future__ import annotations

import numpy as np

from ..timegrid import AveragingPartition, PiecewiseConstantFn
from .constraints import (
    FixingSet,
    Infeasible,
    MaxSwitchings,
    MinDwell,
    SwitchingConstraint,
    embed,
    extended_positions,
    propagate,
)
from .oracles import optimize_dwell, optimize_maxswitch


def round_cia(
    v: PiecewiseConstantFn,
    constraint: SwitchingConstraint,
    fx: FixingSet = FixingSet(),
) -> PiecewiseConstantFn:
    """Minimize ``sum_l s_l |w_l - v_l|`` over feasible binary controls.

    Cells on which propagation fixes the control get a prohibitive
    coefficient; point fixings are hard constraints of the oracle. For a
    dwell-time constraint the result may switch between grid nodes, in
    which case it is returned on the grid merged with its switching times.
    """
    grid = v.grid
    prop = propagate(fx, constraint, grid)
    if not prop.feasible:
        raise Infeasible("fixings are inconsistent with the switching constraint")
    s = grid.lengths
    cost = s * (0.5 - v.values)
    big = 1.0 + float(s.sum())
    bits = prop.cell_bits(grid)
    cost = np.where(bits == 1, -big, np.where(bits == 0, big, cost))
    partition = AveragingPartition.from_grid(grid)

    if isinstance(constraint, MaxSwitchings):
        ext = embed(cost, fx, partition)
        pos = extended_positions(fx, partition)
        ext[pos] = 0.0
        fixed = {int(p): int(c) for p, c in zip(pos, fx.bits)}
        w, _ = optimize_maxswitch(ext, constraint.sigma, constraint.count_initial, fixed)
        mask = np.ones(w.size, dtype=bool)
        mask[pos] = False
        return PiecewiseConstantFn(grid, w[mask].astype(float))
    if isinstance(constraint, MinDwell):
        res = optimize_dwell(cost, constraint.s, fx, partition, grid.horizon)
        return res.control.as_binary(grid)
    raise TypeError(f"unknown constraint {constraint!r}")
