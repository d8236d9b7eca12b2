"""ADMM for the relaxed, cut-constrained, partially fixed control problem.

Free cells ``I`` carry the unknown control; cells in the fixed region ``A``
hold prescribed bits. Cuts ``G u <= b`` are split with a slack ``v``, the
box ``0 <= u <= 1`` with a copy ``w``. All function-valued quantities are
stored as cell values on the node grid; L2 products carry the cell lengths.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .heat import HeatProblem, SpaceTimeField, march_forward
from .timegrid import PiecewiseConstantFn, TemporalGrid, refinement_parents

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class AdmmParams:
    alpha: float = 0.005
    beta: float = 0.005
    rho: float = (1.0 + math.sqrt(5.0)) / 2.0
    gamma_rho: float = 1.0
    gamma_beta: float = 1.0
    eps_abs: float = 1e-3
    eps_rel: float = 1e-3
    eps_pr: float = 1e-5
    max_iter: int = 5000
    linear_solver: str = "cg"
    cg_tol: float = 1e-10

    def __post_init__(self):
        if self.alpha < 0 or self.beta <= 0 or self.rho <= 0:
            raise ValueError("need alpha >= 0, beta > 0, rho > 0")
        if self.linear_solver not in ("cg", "direct"):
            raise ValueError("linear_solver must be 'cg' or 'direct'")


@dataclass
class AdmmState:
    """Iterates on a given grid; ``u``, ``w``, ``mu`` hold one value per cell (fixed cells unused)."""

    grid: TemporalGrid
    u: np.ndarray
    w: np.ndarray
    mu: np.ndarray
    v: np.ndarray
    lam: np.ndarray

    @classmethod
    def cold(cls, grid: TemporalGrid, G: np.ndarray, b_bar: np.ndarray) -> "AdmmState":
        half = np.full(grid.n_cells, 0.5)
        v = np.minimum(G @ half, b_bar) if G.shape[0] else np.zeros(0)
        return cls(grid, half.copy(), half.copy(), np.zeros(grid.n_cells), v, np.zeros(G.shape[0]))

    def copy(self) -> "AdmmState":
        return AdmmState(
            self.grid, self.u.copy(), self.w.copy(), self.mu.copy(), self.v.copy(), self.lam.copy()
        )

    def on_grid(self, fine: TemporalGrid) -> "AdmmState":
        """Duplicate cell values onto a refinement; cut variables are kept."""
        if fine == self.grid:
            return self.copy()
        par = refinement_parents(self.grid, fine)
        return AdmmState(fine, self.u[par], self.w[par], self.mu[par], self.v.copy(), self.lam.copy())


def warm_start_extend(state: AdmmState, row: np.ndarray, b: float, fixed_values: np.ndarray, free: np.ndarray) -> AdmmState:
    """Append one cut: ``v_new = b - G_row(fixed part)``, ``lambda_new = 0``."""
    out = state.copy()
    fixed_part = float(row[~free] @ fixed_values[~free])
    out.v = np.append(out.v, b - fixed_part)
    out.lam = np.append(out.lam, 0.0)
    return out


@dataclass
class AdmmResult:
    u: PiecewiseConstantFn
    state: AdmmState
    objective: float
    e: float
    iterations: int
    converged: bool
    r_primal: float
    r_dual: float
    y: SpaceTimeField

    @property
    def dual_mesh(self) -> float:
        return self.objective - self.e


def _pcg(matvec, rhs, x0, precond, tol, max_iter=500):
    """Preconditioned conjugate gradients; stops at relative preconditioned residual ``tol``."""
    x = x0.copy()
    r = rhs - matvec(x)
    z = precond(r)
    rz = float(r @ z)
    ref = math.sqrt(max(float(rhs @ precond(rhs)), 1e-300))
    if math.sqrt(max(rz, 0.0)) <= tol * ref:
        return x, 0
    p = z.copy()
    for it in range(1, max_iter + 1):
        Ap = matvec(p)
        step = rz / float(p @ Ap)
        x += step * p
        r -= step * Ap
        z = precond(r)
        rz_new = float(r @ z)
        if math.sqrt(max(rz_new, 0.0)) <= tol * ref:
            return x, it
        p = z + (rz_new / rz) * p
        rz = rz_new
    return x, max_iter


class _Preconditioner:
    """``((alpha+beta) D + rho G^T G)^{-1}`` by the Woodbury identity."""

    def __init__(self, d: np.ndarray, G: np.ndarray, rho: float):
        self.dinv = 1.0 / d
        self.G = G
        if G.shape[0]:
            K = np.eye(G.shape[0]) / rho + (G * self.dinv) @ G.T
            self.K = cho_factor(K)

    def __call__(self, r):
        y = self.dinv * r
        if self.G.shape[0]:
            y = y - self.dinv * (self.G.T @ cho_solve(self.K, self.G @ y))
        return y


def solve(
    problem: HeatProblem,
    grid: TemporalGrid,
    G: np.ndarray,
    b: np.ndarray,
    fixed_bits: np.ndarray,
    params: AdmmParams = AdmmParams(),
    warm: Optional[AdmmState] = None,
) -> AdmmResult:
    """Run ADMM on ``grid``.

    Parameters
    ----------
    G, b : cut rows acting on cell values of ``grid`` and right-hand sides
    fixed_bits : per-cell bit for the fixed region, ``-1`` on free cells
    warm : previous iterates on this grid (cold start if None)
    """
    s = grid.lengths
    L = grid.n_cells
    G = np.asarray(G, dtype=float).reshape(-1, L)
    b = np.asarray(b, dtype=float)
    fixed_bits = np.asarray(fixed_bits)
    free = fixed_bits < 0
    u_fixed = np.where(free, 0.0, fixed_bits).astype(float)
    alpha, beta, rho = params.alpha, params.beta, params.rho
    sqrtT = math.sqrt(grid.horizon)

    b_bar = b - G @ u_fixed
    state = AdmmState.cold(grid, G, b_bar) if warm is None else warm.copy()
    if state.grid != grid:
        raise ValueError("warm start lives on a different grid")

    if not np.any(free):
        u = PiecewiseConstantFn(grid, u_fixed)
        y = problem.state(u)
        return AdmmResult(u, state, problem.objective(u, y), 0.0, 0, True, 0.0, 0.0, y)

    sI = s[free]
    GI = G[:, free]
    # linear term from data, initial response and fixed region
    y_fix = problem.state(PiecewiseConstantFn(grid, u_fixed))
    p_fix = problem.adjoint(y_fix)
    lin = -(s * (p_fix.values @ problem.ops.psi))[free]

    H = problem.hessian(grid)[np.ix_(free, free)]
    dI = (alpha + beta) * sI
    A = H + np.diag(dI) + rho * GI.T @ GI
    if params.linear_solver == "direct":
        fac = cho_factor(A)
        lin_solve = lambda rhs, x0: cho_solve(fac, rhs)
    else:
        pre = _Preconditioner(dI, GI, rho)
        lin_solve = lambda rhs, x0: _pcg(lambda x: A @ x, rhs, x0, pre, params.cg_tol)[0]

    u = state.u[free].copy()
    w = state.w[free].copy()
    mu = state.mu[free].copy()
    v = state.v.copy()
    lam = state.lam.copy()
    k = G.shape[0]

    def l2(x):
        return math.sqrt(float(np.sum(sI * x * x)))

    converged = False
    e = math.inf
    rp = rd = math.inf
    it = 0
    for it in range(1, params.max_iter + 1):
        rhs = lin - sI * mu + beta * sI * w - GI.T @ (lam - rho * v) + 0.5 * alpha * sI
        u = lin_solve(rhs, u)
        Gu = GI @ u
        v_old, w_old = v, w
        v = np.minimum(Gu + lam / rho, b_bar) if k else v
        w = np.clip(u + mu / beta, 0.0, 1.0)
        lam = lam + params.gamma_rho * rho * (Gu - v)
        mu = mu + params.gamma_beta * beta * (u - w)

        rP_cut = Gu - v
        rP_box = u - w
        rp = math.sqrt(float(rP_cut @ rP_cut) + l2(rP_box) ** 2)
        r_dual = rho * (GI.T @ (v_old - v)) / sI + beta * (w_old - w)
        rd = l2(r_dual)
        e = -(float(rP_cut @ lam) + float(np.sum(sI * rP_box * mu))) + sqrtT * rd
        tol_p = (math.sqrt(k) + 1.0) * params.eps_abs + params.eps_rel * max(
            float(np.linalg.norm(Gu)) + l2(u), float(np.linalg.norm(v)) + l2(w)
        )
        tol_d = params.eps_abs + params.eps_rel * l2((GI.T @ lam) / sI + mu)
        if rp <= tol_p and rd <= tol_d and e <= params.eps_pr:
            converged = True
            break
    if not converged:
        log.warning("ADMM stopped after %d iterations (e=%.3g, rP=%.3g, rD=%.3g)", it, e, rp, rd)

    new_state = state.copy()
    new_state.u[free], new_state.w[free], new_state.mu[free] = u, w, mu
    new_state.v, new_state.lam = v, lam
    full = u_fixed.copy()
    full[free] = u
    u_fn = PiecewiseConstantFn(grid, full)
    y = problem.state(u_fn)
    J = problem.objective(u_fn, y)
    return AdmmResult(u_fn, new_state, J, e, it, converged, rp, rd, y)
