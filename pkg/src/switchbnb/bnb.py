"""Branch-and-bound over point fixings with adaptive temporal refinement."""

from __future__ import annotations

import itertools
import logging
import math
import time
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import admm
from .dwr import primal_bound, select_refinement
from .heat import HeatProblem
from .outer import (
    BoundDecision,
    NodeOutcome,
    NodeStatus,
    OuterParams,
    classify_bounds,
    relative_gap,
    solve_node,
)
from .switchset import FixingSet, Infeasible, SwitchingConstraint, propagate, round_cia
from .timegrid import PiecewiseConstantFn, TemporalGrid, merge_nodes, refine

log = logging.getLogger(__name__)


MAX_ENUMERATED_CELLS = 12


class NoBranchPoint(Exception):
    """Every unfixed cell is already binary."""


@dataclass
class BnBParams:
    tol: float = 0.02
    red: float = 0.02
    gamma: float = 0.5
    root_cells: int = 20
    max_refine: int = 8
    max_nodes: int = 10_000
    max_cuts_per_node: int = 50
    threads: int = 1
    refine: bool = True
    admm: admm.AdmmParams = field(default_factory=admm.AdmmParams)

    def outer(self) -> OuterParams:
        return OuterParams(self.tol, self.red, self.max_cuts_per_node, self.admm)


@dataclass
class BnBNode:
    id: int
    fixings: FixingSet
    grid: TemporalGrid
    cuts: list = field(default_factory=list)
    warm: Optional[admm.AdmmState] = None
    depth: int = 0
    parent: Optional[int] = None
    dual_mesh: float = -math.inf
    dual_indep: float = -math.inf
    cold_retry: bool = False
    evaluations: int = 0


@dataclass
class Incumbent:
    control: PiecewiseConstantFn
    objective: float
    nu: float
    node: int
    source: str = "cia"

    @property
    def value(self) -> float:
        """Safe primal bound ``J + nu``."""
        return self.objective + self.nu


@dataclass
class Statistics:
    subs: int = 0
    evaluations: int = 0
    cuts: int = 0
    admm_iterations: int = 0
    fix_points: float = 0.0
    fix_indices: float = 0.0
    objective: float = math.nan
    time: float = 0.0
    refine: int = 0
    ratio: float = 0.0
    unresolved: int = 0
    separation_warnings: int = 0

    def row(self) -> dict:
        return {
            "Subs": self.subs,
            "Cuts": self.cuts,
            "ADMM": self.admm_iterations,
            "FixPoints": round(self.fix_points, 3),
            "FixIndices": round(self.fix_indices, 3),
            "Obj": self.objective,
            "Time": round(self.time, 3),
            "Refine": self.refine,
            "Ratio": round(self.ratio, 3),
        }


@dataclass
class BnBResult:
    incumbent: Optional[Incumbent]
    gap: float
    certified: bool
    stats: Statistics
    events: list
    eta_checks: list


def refine_level(root: TemporalGrid, grid: TemporalGrid) -> np.ndarray:
    """Number of bisections of each cell relative to the root cell size."""
    h0 = root.max_length
    return np.rint(np.log2(h0 / grid.lengths)).astype(int)


def pick_branch_point(u: PiecewiseConstantFn, fixings: FixingSet, fixed_bits: Optional[np.ndarray] = None) -> float:
    """Grid node next to the most fractional cell, weighted by cell length."""
    grid = u.grid
    vals = u.values
    score = np.minimum(vals, 1.0 - vals) * grid.lengths
    if fixed_bits is not None:
        score = np.where(np.asarray(fixed_bits) < 0, score, 0.0)
    score = np.where(score > 1e-12, score, 0.0)
    if not np.any(score > 0):
        raise NoBranchPoint("relaxed control is binary on all unfixed cells")
    order = np.argsort(-score, kind="stable")
    for l in order:
        if score[l] <= 0:
            break
        left, right = grid.nodes[l], grid.nodes[l + 1]
        if left > 0.0 and not fixings.has(left):
            return float(left)
        if right < grid.horizon and not fixings.has(right):
            return float(right)
    raise NoBranchPoint("no unfixed node next to a fractional cell")


def _same_control(a: PiecewiseConstantFn, b: PiecewiseConstantFn, tol: float = 1e-9) -> bool:
    """Equality as functions, comparing on the union of both grids."""
    mids = merge_nodes(a.grid, b.grid.nodes)
    mids = 0.5 * (mids.nodes[:-1] + mids.nodes[1:])
    ia = np.searchsorted(a.grid.nodes, mids) - 1
    ib = np.searchsorted(b.grid.nodes, mids) - 1
    return bool(np.all(np.abs(a.values[ia] - b.values[ib]) <= tol))


def primal_pass(
    problem: HeatProblem, u: PiecewiseConstantFn, constraint: SwitchingConstraint, fixings: FixingSet
) -> Optional[tuple]:
    """Round a relaxed control and return ``(binary control, J, nu)``."""
    try:
        ub = round_cia(u, constraint, fixings)
    except Infeasible:
        return None
    J, nu = primal_bound(ub, problem)
    return ub, J, nu


class BranchAndBound:
    def __init__(self, problem: HeatProblem, constraint: SwitchingConstraint, params: BnBParams = BnBParams()):
        self.problem = problem
        self.constraint = constraint
        self.params = params
        self.root_grid = TemporalGrid.uniform(params.root_cells, problem.horizon)
        self.incumbent: Optional[Incumbent] = None
        self.events: list = []
        self.eta_checks: list = []
        self._ids = itertools.count()

    @property
    def pb(self) -> float:
        return self.incumbent.value if self.incumbent is not None else math.inf

    def _offer(self, ub: PiecewiseConstantFn, J: float, nu: float, node: int, source: str) -> bool:
        if not self.params.refine:
            # fixed grid: bounds refer to the discrete problem
            nu = 0.0
        if J + nu < self.pb:
            self.incumbent = Incumbent(ub, J, nu, node, source)
            return True
        return False

    def _evaluate(self, node: BnBNode, pb: float):
        prop = propagate(node.fixings, self.constraint, node.grid)
        if not prop.feasible:
            return prop, None
        out = solve_node(
            self.problem, self.constraint, node.fixings, prop, node.grid, node.cuts, pb,
            self.params.outer(), node.warm, allow_prune=not node.cold_retry,
            mesh_only=not self.params.refine,
        )
        return prop, out

    def run(self) -> BnBResult:
        t0 = time.perf_counter()
        p = self.params
        root = BnBNode(next(self._ids), FixingSet(), self.root_grid)
        queue = deque([root])
        stats = Statistics()
        seen = set()
        gaps = []  # (dual_indep) of nodes closed by tolerance or left unresolved
        pruned_fix = []
        levels_per_node = {}
        executor = ThreadPoolExecutor(p.threads) if p.threads > 1 else None
        try:
            while queue:
                if stats.evaluations >= p.max_nodes:
                    log.warning("node limit reached; %d nodes left open", len(queue))
                    for node in queue:
                        gaps.append(node.dual_indep)
                        stats.unresolved += 1
                    break
                wave = [queue.popleft() for _ in range(min(p.threads, len(queue)))]
                pb = self.pb
                if executor is not None and len(wave) > 1:
                    results = list(executor.map(lambda n: self._evaluate(n, pb), wave))
                else:
                    results = [self._evaluate(n, pb) for n in wave]
                for node, (prop, out) in zip(wave, results):
                    stats.evaluations += 1
                    if node.id not in seen:
                        seen.add(node.id)
                        stats.subs += 1
                    node.evaluations += 1
                    levels_per_node[node.id] = int(refine_level(self.root_grid, node.grid).max())
                    self._handle(node, prop, out, queue, stats, gaps, pruned_fix)
        finally:
            if executor is not None:
                executor.shutdown()

        stats.time = time.perf_counter() - t0
        stats.refine = max(levels_per_node.values(), default=0)
        if levels_per_node:
            finest = sum(1 for v in levels_per_node.values() if v == stats.refine)
            stats.ratio = 100.0 * finest / len(levels_per_node)
        if pruned_fix:
            stats.fix_points = float(np.mean([a for a, _ in pruned_fix]))
            stats.fix_indices = float(np.mean([b for _, b in pruned_fix]))
        pbv = self.pb
        stats.objective = pbv
        gap = 0.0
        for d in gaps:
            if math.isfinite(pbv):
                gap = max(gap, relative_gap(pbv, d))
            else:
                gap = math.inf
        certified = stats.unresolved == 0 and gap <= p.tol + 1e-12
        return BnBResult(self.incumbent, gap, certified, stats, self.events, self.eta_checks)

    def _log(self, node: BnBNode, status: str, out: Optional[NodeOutcome] = None, **extra):
        ev = {
            "node": node.id,
            "parent": node.parent,
            "depth": node.depth,
            "fixings": [[float(t), int(c)] for t, c in node.fixings],
            "cells": node.grid.n_cells,
            "status": status,
            "pb": self.pb,
        }
        if out is not None:
            ev.update(
                dual_mesh=out.dual_mesh,
                dual_indep=out.dual_indep,
                eta=out.errors.eta_total,
                e=out.result.e,
                J=out.result.objective,
                admm_iterations=out.admm_iterations,
                cuts_added=out.cuts_added,
                cuts_total=len(out.cuts),
                converged=out.converged,
            )
        ev.update(extra)
        self.events.append(ev)

    def _handle(self, node, prop, out, queue, stats, gaps, pruned_fix):
        p = self.params
        if out is None:
            self._log(node, "infeasible")
            return
        stats.cuts += out.cuts_added
        stats.admm_iterations += out.admm_iterations
        stats.separation_warnings += out.separation_warnings
        self.eta_checks.extend(out.eta_checks)
        node.dual_mesh, node.dual_indep = out.dual_mesh, out.dual_indep
        fixed_share = 100.0 * prop.fixed_measure() / node.grid.horizon

        if out.status is NodeStatus.NOT_CONVERGED:
            self._log(node, "requeue_cold", out)
            node.cuts = out.cuts
            node.warm = None
            node.cold_retry = True
            queue.append(node)
            return

        if out.status is NodeStatus.PRUNABLE:
            if out.decision is BoundDecision.PRUNE_TOL:
                gaps.append(out.dual_indep)
            pruned_fix.append((len(node.fixings), fixed_share))
            self._log(node, out.decision.value, out)
            return

        if out.status is NodeStatus.NEEDS_REFINEMENT:
            self._refine_or_give_up(node, out, queue, stats, gaps, pruned_fix, fixed_share)
            return

        # branch: try to improve the incumbent first
        bits = prop.cell_bits(node.grid)
        found = primal_pass(self.problem, out.u, self.constraint, node.fixings)
        improved = False
        if found is not None:
            improved = self._offer(*found, node.id, "cia")
        decision = self._recheck(out)
        if decision in (BoundDecision.PRUNE, BoundDecision.PRUNE_TOL) and out.converged:
            if decision is BoundDecision.PRUNE_TOL:
                gaps.append(out.dual_indep)
            pruned_fix.append((len(node.fixings), fixed_share))
            self._log(node, decision.value, out, improved=improved)
            return
        if decision is BoundDecision.REFINE:
            self._refine_or_give_up(node, out, queue, stats, gaps, pruned_fix, fixed_share)
            return
        try:
            tau = pick_branch_point(out.u, node.fixings, bits)
        except NoBranchPoint:
            # relaxed control binary on the free region: its rounding is itself
            if found is not None and _same_control(found[0], out.u):
                gaps.append(out.dual_indep)
                pruned_fix.append((len(node.fixings), fixed_share))
                self._log(node, "resolved", out, improved=improved)
                return
            if not p.refine:
                best = self._enumerate_free_cells(node, out.u, bits)
                if best is not None:
                    gaps.append(best)
                    pruned_fix.append((len(node.fixings), fixed_share))
                    self._log(node, "resolved", out, improved=improved, enumerated=True)
                    return
            self._refine_or_give_up(node, out, queue, stats, gaps, pruned_fix, fixed_share)
            return
        for bit in (0, 1):
            child = BnBNode(
                next(self._ids),
                node.fixings.with_fixing(tau, bit),
                node.grid,
                out.cuts,
                out.warm,
                node.depth + 1,
                node.id,
                out.dual_mesh,
                out.dual_indep,
            )
            queue.append(child)
        self._log(node, "branch", out, tau=tau, improved=improved)

    def _enumerate_free_cells(self, node: BnBNode, u: PiecewiseConstantFn, bits: np.ndarray) -> Optional[float]:
        """Exact node value on a fixed grid by trying every binary completion of the free cells.

        Returns the smallest feasible objective (``inf`` if none is feasible),
        or None when there are too many free cells to enumerate.
        """
        free = np.flatnonzero(bits < 0)
        if free.size > MAX_ENUMERATED_CELLS:
            return None
        best = math.inf
        base = np.where(bits < 0, 0.0, bits).astype(float)
        for combo in itertools.product((0.0, 1.0), repeat=free.size):
            vals = base.copy()
            vals[free] = combo
            cand = PiecewiseConstantFn(node.grid, vals)
            try:
                # a feasible pattern is its own best tracking rounding
                ub = round_cia(cand, self.constraint, node.fixings)
            except Infeasible:
                continue
            if not _same_control(ub, cand):
                continue
            J, nu = primal_bound(cand, self.problem)
            self._offer(cand, J, nu, node.id, "enumeration")
            best = min(best, J)
        return best

    def _recheck(self, out: NodeOutcome) -> BoundDecision:
        return classify_bounds(self.pb, out.dual_mesh, out.dual_indep, self.params.tol)

    def _refine_or_give_up(self, node, out, queue, stats, gaps, pruned_fix, fixed_share):
        p = self.params
        grid = node.grid
        if p.refine:
            levels = refine_level(self.root_grid, grid)
            cells = select_refinement(out.errors.eta_cell, p.gamma, grid.lengths)
            cells = {c for c in cells if levels[c] < p.max_refine}
            if not cells:
                open_cells = np.flatnonzero(levels < p.max_refine)
                if open_cells.size:
                    mag = np.abs(out.errors.eta_cell[open_cells])
                    cells = {int(open_cells[np.argmax(mag)])}
            if cells:
                fine = refine(grid, cells)
                node.grid = fine
                node.cuts = out.cuts
                node.warm = out.warm.on_grid(fine)
                queue.append(node)
                self._log(node, "refine", out, refined=len(cells))
                return
        stats.unresolved += 1
        gaps.append(out.dual_indep)
        pruned_fix.append((len(node.fixings), fixed_share))
        self._log(node, "unresolved", out)


def run(problem: HeatProblem, constraint: SwitchingConstraint, params: BnBParams = BnBParams()) -> BnBResult:
    return BranchAndBound(problem, constraint, params).run()
