"""Dual-weighted-residual estimates of the time discretization error.

The weights are the interpolation errors of the discrete state and adjoint
against their continuous piecewise linear interpolants in time. The state
interpolant uses the cell values at right endpoints (and ``y_0`` at
``t = 0``), the adjoint interpolant the cell values at left endpoints (and
0 at ``T``). With these anchors the jump and time-derivative contributions
cancel, leaving cell-local expressions that are integrated exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .heat import HeatProblem, SpaceTimeField
from .timegrid import PiecewiseConstantFn, TemporalGrid, cell_gauss


@dataclass
class ErrorBreakdown:
    """Estimated error ``eta`` of the relaxed node value, split over cells."""

    eta_total: float
    eta_cell: np.ndarray
    nu: float = 0.0
    e: float = 0.0
    degraded: bool = False
    terms: dict = field(default_factory=dict)


@dataclass
class PrimalDual:
    """Discrete relaxed solution with multipliers, everything on ``grid``.

    ``mu`` and ``lam`` are the box and cut multipliers, ``G`` the cut rows on
    the grid cells, ``free`` the mask of unfixed cells.
    """

    grid: TemporalGrid
    u: np.ndarray
    y: SpaceTimeField
    p: SpaceTimeField
    mu: np.ndarray
    lam: np.ndarray
    G: np.ndarray
    free: np.ndarray
    e: float = 0.0


def _state_weights(problem: HeatProblem, y: SpaceTimeField) -> np.ndarray:
    """``d_l = y_{l-1} - y_l`` with ``y_0`` the initial coefficient vector."""
    yv = y.values
    prev = np.vstack([problem.y0[None, :], yv[:-1]])
    return prev - yv


def _adjoint_weights(p: SpaceTimeField) -> np.ndarray:
    """``e_l = p_{l+1} - p_l`` with ``p_{L+1} = 0``."""
    pv = p.values
    nxt = np.vstack([pv[1:], np.zeros((1, pv.shape[1]))])
    return nxt - pv


def state_residual_cells(problem: HeatProblem, y: SpaceTimeField, p: SpaceTimeField) -> np.ndarray:
    """Per-cell tracking/state residual weighted by the state interpolation error."""
    ops = problem.ops
    grid = y.grid
    s = grid.lengths
    d = _state_weights(problem, y)
    Md = ops.mass(d.T).T
    Ad = ops.stiff(d.T).T
    yd0 = problem.y_d.integrals(grid)
    yd1 = problem.y_d.first_moments(grid)
    # ∫ (y_l - y_d)ᵀ M d_l (1 - θ) dt
    track = 0.5 * s * np.einsum("li,li->l", y.values, Md) - np.einsum("li,li->l", yd0 - yd1, Md)
    return track - 0.5 * s * np.einsum("li,li->l", Ad, p.values)


def adjoint_residual_cells(problem: HeatProblem, y: SpaceTimeField, p: SpaceTimeField) -> np.ndarray:
    """Per-cell state equation residual weighted by the adjoint interpolation error."""
    ops = problem.ops
    d = _state_weights(problem, y)
    e = _adjoint_weights(p)
    # s_l (u_l psi - A y_l) equals M (y_l - y_{l-1}) by the discrete state equation
    return -0.5 * np.einsum("li,li->l", ops.mass(d.T).T, e)


def _clamp_pieces(lo_val: np.ndarray, slope: np.ndarray, alpha: float):
    """Sub-cell breakpoints in θ where ``-(lo + slope θ)/α + ½`` crosses 0 or 1."""
    pts = [np.zeros_like(lo_val), np.ones_like(lo_val)]
    with np.errstate(divide="ignore", invalid="ignore"):
        for level in (0.0, 1.0):
            # -(a + bθ)/α + ½ = level  →  θ = (α (½ - level) - a) / b
            th = (alpha * (0.5 - level) - lo_val) / slope
            th = np.where(np.isfinite(th) & (th > 0.0) & (th < 1.0), th, np.nan)
            pts.append(th)
    P = np.sort(np.stack(pts, axis=1), axis=1)
    return P  # nan entries sort to the end


def control_terms_cells(pd: PrimalDual, problem: HeatProblem) -> tuple:
    """Control and multiplier terms per cell (zero on fixed cells).

    Returns ``(cells, degraded)`` where ``cells`` has shape ``(5, L)``: the
    gradient term and the four complementarity terms.
    """
    grid = pd.grid
    s = grid.lengths
    L = grid.n_cells
    alpha = problem.alpha
    psi = problem.ops.psi
    a = pd.p.values @ psi
    b = _adjoint_weights(pd.p) @ psi
    if pd.G.shape[0]:
        g = (pd.G.T @ pd.lam) / s
    else:
        g = np.zeros(L)
    lo = a + g  # ψᵀ I p + G*λ at θ = 0; slope b in θ
    u = pd.u
    mu = pd.mu
    mu_p, mu_m = np.maximum(mu, 0.0), np.maximum(-mu, 0.0)
    grad = alpha * (u - 0.5) + a + mu + g

    degraded = alpha <= 0.0
    xq, wq = cell_gauss(2)
    out = np.zeros((5, L))
    if degraded:
        bps = np.stack([np.zeros(L), np.ones(L)], axis=1)
    else:
        bps = _clamp_pieces(lo, b, alpha)
    for k in range(bps.shape[1] - 1):
        t0, t1 = bps[:, k], bps[:, k + 1]
        ok = np.isfinite(t0) & np.isfinite(t1) & (t1 > t0)
        t0 = np.where(ok, t0, 0.0)
        t1 = np.where(ok, t1, 0.0)
        width = t1 - t0
        for xi, wi in zip(xq, wq):
            th = t0 + width * xi
            q = lo + b * th
            if degraded:
                ut = u
            else:
                ut = np.clip(-q / alpha + 0.5, 0.0, 1.0)
            mt = -alpha * (ut - 0.5) - q
            mt_p, mt_m = np.maximum(mt, 0.0), np.maximum(-mt, 0.0)
            wgt = s * width * wi
            out[0] += wgt * grad * (ut - u)
            out[1] += wgt * (mt_p - mu_p) * (ut - 1.0)
            out[2] -= wgt * (mt_m - mu_m) * ut
            out[3] += wgt * (mt_p - mu_p) * (u - 1.0)
            out[4] -= wgt * (mt_m - mu_m) * u
    out[:, ~pd.free] = 0.0
    return out, degraded


def estimate_eta(pd: PrimalDual, problem: HeatProblem) -> ErrorBreakdown:
    """Estimate ``J(continuous) - J(discrete)`` for a relaxed node solution."""
    ty = state_residual_cells(problem, pd.y, pd.p)
    tp = adjoint_residual_cells(problem, pd.y, pd.p)
    ctrl, degraded = control_terms_cells(pd, problem)
    cells = 0.5 * (ty + tp + ctrl.sum(axis=0))
    terms = {
        "state": 0.5 * float(ty.sum()),
        "adjoint": 0.5 * float(tp.sum()),
        "control": 0.5 * float(ctrl[0].sum()),
        "multipliers": 0.5 * float(ctrl[1:].sum()),
    }
    return ErrorBreakdown(float(cells.sum()), cells, 0.0, pd.e, degraded, terms)


def estimate_nu(u: PiecewiseConstantFn, y_sh: SpaceTimeField, p_sh: SpaceTimeField, problem: HeatProblem) -> float:
    """Estimate ``J(S u, u) - J(S_sh u, u)`` for a fixed control."""
    if y_sh.grid != u.grid or p_sh.grid != u.grid:
        raise ValueError("state, adjoint and control must share the grid")
    return float(adjoint_residual_cells(problem, y_sh, p_sh).sum())


def primal_bound(u: PiecewiseConstantFn, problem: HeatProblem) -> tuple:
    """``(J(S_sh u, u), nu)`` for a binary control."""
    y = problem.state(u)
    p = problem.adjoint(y)
    return problem.objective(u, y), estimate_nu(u, y, p, problem)


def select_refinement(eta_cell: np.ndarray, gamma: float = 0.5, lengths: Optional[np.ndarray] = None) -> set:
    """Smallest set of cells, by decreasing ``|eta_l|``, holding more than ``gamma`` of the total."""
    if not 0.0 < gamma < 1.0:
        raise ValueError("gamma must lie in (0, 1)")
    mag = np.abs(np.asarray(eta_cell, dtype=float))
    if mag.size == 0:
        return set()
    total = float(mag.sum())
    if total == 0.0:
        if lengths is None:
            return {0}
        return {int(np.argmax(lengths))}
    order = np.argsort(-mag, kind="stable")
    acc = np.cumsum(mag[order])
    n = int(np.searchsorted(acc, gamma * total, side="right")) + 1
    # guard against rounding in the cumulative sum
    while n < mag.size and not acc[n - 1] > gamma * total:
        n += 1
    return set(int(i) for i in order[:n])
