"""Cutting planes for the projected switching polytope of a branch-and-bound node."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from ..timegrid import AveragingPartition, TemporalGrid
from .constraints import (
    FixingSet,
    MaxSwitchings,
    MinDwell,
    SwitchingConstraint,
    delete,
    embed,
    extended_positions,
)
from .oracles import DwellPlan, optimize_dwell, optimize_maxswitch

log = logging.getLogger(__name__)

TOL_SEP = 1e-6
FW_MAX_ITER = 500
# minimum violation (after scaling to unit max-norm) for a cut to be emitted
MIN_VIOLATION = 1e-10


@dataclass(frozen=True, eq=False)
class CuttingPlane:
    """Valid inequality ``a @ Pi(u) <= b`` on its own averaging partition."""

    partition: AveragingPartition
    a: np.ndarray
    b: float

    def __post_init__(self):
        a = np.array(self.a, dtype=float)
        if a.shape != (self.partition.size,):
            raise ValueError("coefficient vector does not match the partition")
        a.setflags(write=False)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", float(self.b))

    def violation(self, v: np.ndarray) -> float:
        return float(self.a @ v - self.b)

    def row(self, grid: TemporalGrid) -> np.ndarray:
        """Coefficients of ``u ↦ a @ Pi(u)`` acting on the cell values of ``grid``."""
        return self.a @ self.partition.matrix(grid)

    @property
    def l2_norm(self) -> float:
        """L2(0,T) norm of the function ``g`` with ``a @ Pi(u) = (g, u)``."""
        return float(np.sqrt(np.sum(self.a**2 / self.partition.lengths)))

    def unit_row(self, grid: TemporalGrid) -> tuple:
        """Row and right-hand side rescaled so that ``g`` has unit L2 norm."""
        n = self.l2_norm
        if n == 0.0:
            return self.row(grid), self.b
        return self.row(grid) / n, self.b / n


@dataclass(frozen=True)
class SeparationContext:
    """What the separator needs to know about a node."""

    constraint: SwitchingConstraint
    fixings: FixingSet
    partition: AveragingPartition
    horizon: float = 1.0
    tol_sep: float = TOL_SEP
    max_iter: int = FW_MAX_ITER


@dataclass
class SeparationOutcome:
    cut: Optional[CuttingPlane]
    stage: str
    distance: float = float("nan")
    iterations: int = 0
    warning: bool = False


def total_variation(x: np.ndarray, count_initial: bool = True) -> float:
    x = np.asarray(x, dtype=float)
    tv = float(np.sum(np.abs(np.diff(x))))
    if count_initial and x.size:
        tv += abs(x[0])
    return tv


def tv_subgradient_cut(x: np.ndarray, count_initial: bool = True) -> np.ndarray:
    """Coefficients ``a`` with ``a @ w = sum_l sign(x_l - x_{l-1}) (w_l - w_{l-1})``."""
    x = np.asarray(x, dtype=float)
    prev = np.concatenate([[0.0], x[:-1]])
    sgn = np.sign(x - prev)
    sgn[np.abs(x - prev) <= 1e-12] = 0.0
    if not count_initial:
        sgn[0] = 0.0
    nxt = np.concatenate([sgn[1:], [0.0]])
    return sgn - nxt


def project_hull(
    x: np.ndarray,
    lmo: Callable[[np.ndarray], np.ndarray],
    tol: float = TOL_SEP,
    max_iter: int = FW_MAX_ITER,
) -> tuple:
    """Away-step Frank-Wolfe towards the Euclidean projection of ``x`` onto a hull.

    ``lmo(g)`` returns a vertex minimizing ``g @ w``. Stops as soon as the
    current residual ``a = x - z`` yields a clearly violated valid
    inequality ``a @ w <= max_w a @ w``, or the distance drops below ``tol``.

    Returns
    -------
    (a, b, distance, iterations, status)
        ``status`` is ``"cut"``, ``"inside"`` or ``"cap"``.
    """
    x = np.asarray(x, dtype=float)
    v0 = np.asarray(lmo(-x), dtype=float)
    active = {v0.tobytes(): [v0, 1.0]}
    z = v0.copy()
    a, b = x - z, float((x - z) @ v0)
    for it in range(1, max_iter + 1):
        a = x - z
        dist = float(np.linalg.norm(a))
        if dist <= tol:
            return a, float("nan"), dist, it, "inside"
        s_fw = np.asarray(lmo(-a), dtype=float)
        b = float(a @ s_fw)
        gap = b - float(a @ z)
        viol = float(a @ x) - b
        if viol > 0 and gap <= 0.25 * dist * dist:
            return a, b, dist, it, "cut"
        # away direction among the active vertices
        key_aw, (v_aw, w_aw) = max(active.items(), key=lambda kv: -float(a @ kv[1][0]))
        gap_aw = float(a @ z) - float(a @ v_aw)
        if gap >= gap_aw:
            d = s_fw - z
            gmax = 1.0
            fw_step = True
        else:
            d = z - v_aw
            gmax = w_aw / (1.0 - w_aw) if w_aw < 1.0 else 0.0
            fw_step = False
        dd = float(d @ d)
        if dd <= 1e-30:
            break
        step = min(max(float(a @ d) / dd, 0.0), gmax)
        if fw_step:
            for entry in active.values():
                entry[1] *= 1.0 - step
            key = s_fw.tobytes()
            if key in active:
                active[key][1] += step
            else:
                active[key] = [s_fw, step]
            if step >= 1.0 - 1e-15:
                active = {key: [s_fw, 1.0]}
        else:
            for entry in active.values():
                entry[1] *= 1.0 + step
            active[key_aw][1] -= step
            if step >= gmax - 1e-15:
                del active[key_aw]
        active = {k: e for k, e in active.items() if e[1] > 1e-14}
        total = sum(e[1] for e in active.values())
        z = sum(e[1] * e[0] for e in active.values()) / total
    a = x - z
    dist = float(np.linalg.norm(a))
    s_fw = np.asarray(lmo(-a), dtype=float)
    b = float(a @ s_fw)
    if float(a @ x) - b > 0:
        return a, b, dist, max_iter, "cut"
    return a, float("nan"), dist, max_iter, "cap"


def _normalize(a: np.ndarray, b: float) -> tuple:
    scale = float(np.max(np.abs(a)))
    if scale == 0.0:
        return a, b
    return a / scale, b / scale


def separate_with_info(v: np.ndarray, ctx: SeparationContext) -> SeparationOutcome:
    v = np.asarray(v, dtype=float)
    c = ctx.constraint
    if isinstance(c, MaxSwitchings):
        x = embed(v, ctx.fixings, ctx.partition)
        pos = extended_positions(ctx.fixings, ctx.partition)
        fixed = {int(p): int(bit) for p, bit in zip(pos, ctx.fixings.bits)}

        def lmo(g):
            return optimize_maxswitch(g, c.sigma, c.count_initial, fixed)[0].astype(float)

        if total_variation(x, c.count_initial) > c.sigma + 1e-9:
            a = tv_subgradient_cut(x, c.count_initial)
            b = float(a @ lmo(-a))
            a, b = _normalize(a, b)
            if a @ x - b > MIN_VIOLATION:
                a_red, b_red = delete(a, b, ctx.fixings, ctx.partition)
                return SeparationOutcome(CuttingPlane(ctx.partition, a_red, b_red), "tv")
        a, b, dist, it, status = project_hull(x, lmo, ctx.tol_sep, ctx.max_iter)
        if status == "cut":
            a, b = _normalize(a, b)
            if a @ x - b > MIN_VIOLATION:
                a_red, b_red = delete(a, b, ctx.fixings, ctx.partition)
                return SeparationOutcome(CuttingPlane(ctx.partition, a_red, b_red), "fw", dist, it)
            status = "inside"
    elif isinstance(c, MinDwell):
        plan = DwellPlan.build(c.s, ctx.fixings, ctx.partition, ctx.horizon)

        def lmo(g):
            return optimize_dwell(g, c.s, ctx.fixings, ctx.partition, ctx.horizon, plan).projected

        a, b, dist, it, status = project_hull(v, lmo, ctx.tol_sep, ctx.max_iter)
        if status == "cut":
            a, b = _normalize(a, b)
            if a @ v - b > MIN_VIOLATION:
                return SeparationOutcome(CuttingPlane(ctx.partition, a, b), "fw", dist, it)
            status = "inside"
    else:
        raise TypeError(f"unknown constraint {c!r}")
    if status == "cap":
        log.warning("projection did not settle within %d iterations (distance %.3g)", it, dist)
        return SeparationOutcome(None, "cap", dist, it, warning=True)
    return SeparationOutcome(None, "inside", dist, it)


def separate(v: np.ndarray, ctx: SeparationContext) -> Optional[CuttingPlane]:
    """Return a valid inequality violated by ``v``, or None if ``v`` is (numerically) inside."""
    return separate_with_info(v, ctx).cut
