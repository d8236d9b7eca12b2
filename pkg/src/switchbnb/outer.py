"""Outer approximation for one branch-and-bound node.

Alternates ADMM solves of the relaxed node problem with separation of the
relaxed control, until the bounds decide the node or the cut loop stalls.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from . import admm
from .dwr import ErrorBreakdown, PrimalDual, estimate_eta
from .heat import HeatProblem
from .switchset import (
    CuttingPlane,
    FixingSet,
    Propagation,
    SeparationContext,
    SwitchingConstraint,
    separate_with_info,
)
from .timegrid import AveragingPartition, PiecewiseConstantFn, TemporalGrid, project


class BoundDecision(Enum):
    PRUNE = "prune"
    PRUNE_TOL = "prune_tol"
    REFINE = "refine"
    CONTINUE = "continue"


class NodeStatus(Enum):
    PRUNABLE = "prunable"
    NEEDS_REFINEMENT = "needs_refinement"
    BRANCH = "branch"
    NOT_CONVERGED = "not_converged"


def relative_gap(pb: float, bound: float) -> float:
    return (pb - bound) / max(abs(pb), 1e-12)


def classify_bounds(pb: float, dual_mesh: float, dual_indep: float, tol: float) -> BoundDecision:
    """Decide a node from the incumbent value and its two dual bounds.

    Checked in order: the mesh-independent bound exceeds the incumbent
    (prune); it is within the relative tolerance of it (prune); the
    incumbent separates the two bounds (refine); otherwise continue.
    """
    if not math.isfinite(pb):
        return BoundDecision.CONTINUE
    if dual_indep > pb:
        return BoundDecision.PRUNE
    if relative_gap(pb, dual_indep) <= tol:
        return BoundDecision.PRUNE_TOL
    if dual_indep <= pb < dual_mesh:
        return BoundDecision.REFINE
    return BoundDecision.CONTINUE


def red_stall(bounds: Sequence[float], red: float, window: int = 3) -> bool:
    """True if the last ``window`` relative bound changes are all below ``red``."""
    if len(bounds) < window + 1:
        return False
    b = np.asarray(bounds[-(window + 1):], dtype=float)
    rel = np.abs(np.diff(b)) / np.maximum(np.abs(b[:-1]), 1e-12)
    return bool(np.all(rel < red))


@dataclass(frozen=True)
class OuterParams:
    tol: float = 0.02
    red: float = 0.02
    max_cuts_per_node: int = 50
    admm: admm.AdmmParams = admm.AdmmParams()


@dataclass
class NodeOutcome:
    status: NodeStatus
    decision: BoundDecision
    dual_mesh: float
    dual_indep: float
    u: PiecewiseConstantFn
    result: admm.AdmmResult
    errors: ErrorBreakdown
    cuts: list
    warm: admm.AdmmState
    cuts_added: int = 0
    admm_iterations: int = 0
    outer_iterations: int = 0
    converged: bool = True
    separation_warnings: int = 0
    history: list = field(default_factory=list)
    eta_checks: list = field(default_factory=list)


def cut_matrix(cuts: Sequence[CuttingPlane], grid: TemporalGrid) -> tuple:
    """Cut rows on ``grid`` scaled to unit L2 norm, with their right-hand sides.

    Scaling leaves each half-space unchanged and keeps the cut penalty
    comparable to the curvature of the objective.
    """
    rows = [c.unit_row(grid) for c in cuts]
    G = np.array([r for r, _ in rows]).reshape(len(cuts), grid.n_cells)
    b = np.array([rhs for _, rhs in rows])
    return G, b


def node_primal_dual(res: admm.AdmmResult, problem: HeatProblem, G: np.ndarray, free: np.ndarray) -> PrimalDual:
    p = problem.adjoint(res.y)
    return PrimalDual(res.u.grid, res.u.values, res.y, p, res.state.mu, res.state.lam, G, free, res.e)


def solve_node(
    problem: HeatProblem,
    constraint: SwitchingConstraint,
    fixings: FixingSet,
    propagation: Propagation,
    grid: TemporalGrid,
    cuts: list,
    pb: float,
    params: OuterParams = OuterParams(),
    warm: Optional[admm.AdmmState] = None,
    allow_prune: bool = True,
    mesh_only: bool = False,
) -> NodeOutcome:
    """Cut loop for one node on a fixed grid.

    ``cuts`` is copied; new cuts are appended to the copy returned in the outcome.
    With ``mesh_only`` the error estimate is reported but not added to the
    bound, so decisions refer to the discrete problem on ``grid``.
    """
    cuts = list(cuts)
    bits = propagation.cell_bits(grid)
    free = bits < 0
    u_fixed = np.where(free, 0.0, bits).astype(float)
    partition = AveragingPartition.from_grid(grid)
    ctx = SeparationContext(constraint, fixings, partition, grid.horizon)
    G, b = cut_matrix(cuts, grid)

    history = []
    eta_checks = []
    admm_its = 0
    added = 0
    warnings = 0
    outer = 0
    while True:
        outer += 1
        res = admm.solve(problem, grid, G, b, bits, params.admm, warm)
        admm_its += res.iterations
        warm = res.state
        pd = node_primal_dual(res, problem, G, free)
        eb = estimate_eta(pd, problem)
        eta_checks.append((float(eb.eta_cell.sum()), eb.eta_total))
        dual_mesh = res.objective - res.e
        dual_indep = dual_mesh if mesh_only else dual_mesh + eb.eta_total
        history.append(dual_mesh)
        decision = classify_bounds(pb, dual_mesh, dual_indep, params.tol)

        def outcome(status):
            return NodeOutcome(
                status, decision, dual_mesh, dual_indep, res.u, res, eb, cuts, warm,
                added, admm_its, outer, res.converged, warnings, history, eta_checks,
            )

        if not res.converged:
            if allow_prune:
                return outcome(NodeStatus.NOT_CONVERGED)
            if decision in (BoundDecision.PRUNE, BoundDecision.PRUNE_TOL):
                decision = BoundDecision.CONTINUE
        if decision in (BoundDecision.PRUNE, BoundDecision.PRUNE_TOL):
            return outcome(NodeStatus.PRUNABLE)
        if decision is BoundDecision.REFINE:
            return outcome(NodeStatus.NEEDS_REFINEMENT)
        if red_stall(history, params.red) or added >= params.max_cuts_per_node:
            return outcome(NodeStatus.BRANCH)
        sep = separate_with_info(res.u.values, ctx)
        warnings += sep.warning
        if sep.cut is None:
            return outcome(NodeStatus.BRANCH)
        cut = sep.cut
        row, rhs = cut.unit_row(grid)
        warm = admm.warm_start_extend(warm, row, rhs, u_fixed, free)
        cuts.append(cut)
        G = np.vstack([G, row[None, :]])
        b = np.append(b, rhs)
        added += 1
