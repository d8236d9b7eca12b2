"""1D heat equation: dG(0) (implicit Euler) in time, P1 finite elements in space.

The state equation ``∂_t y - Δy = u(t) ψ(x)`` on ``Ω = (0, 1)`` with homogeneous
Dirichlet data is marched cell by cell,

    (M + s_l A) y_l = M y_{l-1} + s_l u_l ψ_h,

and the adjoint is the exact discrete transpose of that recursion.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Optional

import numpy as np
from scipy.linalg import eigh, solve_banded

from .timegrid import PiecewiseConstantFn, TemporalGrid, cell_gauss, overlap_matrix


def default_form_function(x):
    return np.exp(x) * np.sin(np.pi * x) + 0.5


@dataclass(frozen=True)
class SpaceGrid:
    """Uniform mesh of (0, 1) with ``n_cells`` elements; unknowns at interior nodes."""

    n_cells: int = 64

    def __post_init__(self):
        if self.n_cells < 2:
            raise ValueError("need at least two spatial cells")

    @property
    def h(self) -> float:
        return 1.0 / self.n_cells

    @property
    def n(self) -> int:
        return self.n_cells - 1

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.n_cells + 1)


def _load_vector(space: SpaceGrid, f: Callable, n_points: int) -> np.ndarray:
    """``(f, φ_i)`` for interior hat functions by Gauss-Legendre per element."""
    x, w = np.polynomial.legendre.leggauss(n_points)
    xi = 0.5 * (x + 1.0)
    w = 0.5 * w * space.h
    left = space.nodes[:-1]
    pts = left[:, None] + space.h * xi[None, :]
    fv = f(pts) * w[None, :]
    # element e couples nodes e (weight 1 - ξ) and e + 1 (weight ξ)
    b = np.zeros(space.n_cells + 1)
    b[:-1] += np.sum(fv * (1.0 - xi)[None, :], axis=1)
    b[1:] += np.sum(fv * xi[None, :], axis=1)
    return b[1:-1]


@dataclass(frozen=True, eq=False)
class FemOperators:
    """Tridiagonal mass/stiffness matrices and the discrete form function."""

    space: SpaceGrid
    psi: np.ndarray
    psi_quadrature: int = 2

    @classmethod
    def build(
        cls,
        space: SpaceGrid = SpaceGrid(),
        form_function: Callable = default_form_function,
        psi_quadrature: int = 2,
    ) -> "FemOperators":
        """Assemble operators; ``psi_quadrature`` Gauss points per element
        (2 points integrate cubics exactly)."""
        psi = _load_vector(space, form_function, psi_quadrature)
        return cls(space, psi, psi_quadrature)

    @classmethod
    def zero_source(cls, space: SpaceGrid = SpaceGrid()) -> "FemOperators":
        return cls(space, np.zeros(space.n))

    @property
    def n(self) -> int:
        return self.space.n

    @cached_property
    def mass_bands(self) -> tuple:
        h = self.space.h
        return (np.full(self.n, 4.0 * h / 6.0), np.full(self.n - 1, h / 6.0))

    @cached_property
    def stiff_bands(self) -> tuple:
        h = self.space.h
        return (np.full(self.n, 2.0 / h), np.full(self.n - 1, -1.0 / h))

    def mass_dense(self) -> np.ndarray:
        d, o = self.mass_bands
        return np.diag(d) + np.diag(o, 1) + np.diag(o, -1)

    def stiff_dense(self) -> np.ndarray:
        d, o = self.stiff_bands
        return np.diag(d) + np.diag(o, 1) + np.diag(o, -1)

    def mass(self, v: np.ndarray) -> np.ndarray:
        """``M v`` along the first axis of ``v``."""
        return _tridiag_apply(*self.mass_bands, v)

    def stiff(self, v: np.ndarray) -> np.ndarray:
        return _tridiag_apply(*self.stiff_bands, v)

    def system_bands(self, s: float) -> np.ndarray:
        """Banded storage of ``M + s A`` for ``solve_banded``."""
        md, mo = self.mass_bands
        ad, ao = self.stiff_bands
        ab = np.zeros((3, self.n))
        ab[0, 1:] = mo + s * ao
        ab[1] = md + s * ad
        ab[2, :-1] = mo + s * ao
        return ab

    def project_initial(self, y0: Callable | np.ndarray | None) -> np.ndarray:
        """P1 L2-projection of an initial state (callable) or passthrough (array)."""
        if y0 is None:
            return np.zeros(self.n)
        if callable(y0):
            rhs = _load_vector(self.space, y0, 6)
            md, mo = self.mass_bands
            ab = np.zeros((3, self.n))
            ab[0, 1:] = mo
            ab[1] = md
            ab[2, :-1] = mo
            return solve_banded((1, 1), ab, rhs)
        y0 = np.asarray(y0, dtype=float)
        if y0.shape != (self.n,):
            raise ValueError("initial coefficient vector has wrong length")
        return y0

    @cached_property
    def modes(self) -> tuple:
        """Generalized eigenpairs ``A V = M V Λ`` with ``Vᵀ M V = I``."""
        lam, V = eigh(self.stiff_dense(), self.mass_dense())
        return lam, V


def _tridiag_apply(d, o, v):
    out = d.reshape((-1,) + (1,) * (v.ndim - 1)) * v
    oo = o.reshape((-1,) + (1,) * (v.ndim - 1))
    out[:-1] += oo * v[1:]
    out[1:] += oo * v[:-1]
    return out


@dataclass(frozen=True, eq=False)
class SpaceTimeField:
    """Cell-wise constant in time, P1 in space: ``values[l]`` holds the nodal vector on ``J_l``."""

    grid: TemporalGrid
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2 or values.shape[0] != self.grid.n_cells:
            raise ValueError("values must have shape (n_cells, n_space)")
        object.__setattr__(self, "values", values)

    @classmethod
    def zeros(cls, grid: TemporalGrid, n: int) -> "SpaceTimeField":
        return cls(grid, np.zeros((grid.n_cells, n)))

    def __sub__(self, other: "SpaceTimeField") -> "SpaceTimeField":
        if other.grid != self.grid:
            other = other.on(self.grid)
        return SpaceTimeField(self.grid, self.values - other.values)

    def __add__(self, other: "SpaceTimeField") -> "SpaceTimeField":
        if other.grid != self.grid:
            other = other.on(self.grid)
        return SpaceTimeField(self.grid, self.values + other.values)

    def integrals(self, grid: TemporalGrid) -> np.ndarray:
        """``∫_{J_l} f dt`` for the cells of ``grid`` (exact)."""
        return overlap_matrix(self.grid, grid) @ self.values

    def first_moments(self, grid: TemporalGrid) -> np.ndarray:
        """``∫_{J_l} f(t) θ_l(t) dt`` with the local coordinate ``θ_l = (t - t_{l-1}) / s_l``."""
        lo = np.maximum(grid.nodes[:-1, None], self.grid.nodes[None, :-1])
        hi = np.minimum(grid.nodes[1:, None], self.grid.nodes[None, 1:])
        hi = np.maximum(hi, lo)
        t0 = grid.nodes[:-1, None]
        s = grid.lengths[:, None]
        w = ((hi - t0) ** 2 - (lo - t0) ** 2) / (2.0 * s)
        return w @ self.values

    def on(self, grid: TemporalGrid) -> "SpaceTimeField":
        """Exact cell averages on another grid."""
        if grid == self.grid:
            return self
        return SpaceTimeField(grid, self.integrals(grid) / grid.lengths[:, None])

    def norm2(self, ops: FemOperators) -> float:
        """``‖f‖²_{L2(Q)} = Σ s_l f_lᵀ M f_l``."""
        v = self.values
        return float(np.sum(self.grid.lengths * np.einsum("li,il->l", v, ops.mass(v.T))))


def _check_grid(u: PiecewiseConstantFn, grid: Optional[TemporalGrid]):
    if grid is not None and u.grid != grid:
        raise ValueError("control and field live on different temporal grids")


def march_forward(
    grid: TemporalGrid, ops: FemOperators, source: np.ndarray, y0: np.ndarray
) -> np.ndarray:
    """Solve ``(M + s_l A) y_l = M y_{l-1} + source_l`` for all cells.

    ``source`` has shape ``(L, n)`` or ``(L, n, k)`` for k simultaneous problems.
    """
    L = grid.n_cells
    out = np.empty_like(source, dtype=float)
    prev = np.broadcast_to(y0.reshape((ops.n,) + (1,) * (source.ndim - 2)), source.shape[1:])
    cache = {}
    for l, s in enumerate(grid.lengths):
        ab = cache.get(s)
        if ab is None:
            ab = cache[s] = ops.system_bands(s)
        prev = solve_banded((1, 1), ab, ops.mass(prev) + source[l], check_finite=False)
        out[l] = prev
    return out


def march_backward(grid: TemporalGrid, ops: FemOperators, source: np.ndarray) -> np.ndarray:
    """Solve ``(M + s_l A) p_l = M p_{l+1} + source_l`` backwards with ``p_{L+1} = 0``."""
    out = np.empty_like(source, dtype=float)
    nxt = np.zeros(source.shape[1:])
    cache = {}
    for l in range(grid.n_cells - 1, -1, -1):
        s = grid.lengths[l]
        ab = cache.get(s)
        if ab is None:
            ab = cache[s] = ops.system_bands(s)
        nxt = solve_banded((1, 1), ab, ops.mass(nxt) + source[l], check_finite=False)
        out[l] = nxt
    return out


def solve_state(
    u: PiecewiseConstantFn, y0: np.ndarray | None, ops: FemOperators
) -> SpaceTimeField:
    grid = u.grid
    y0 = np.zeros(ops.n) if y0 is None else np.asarray(y0, dtype=float)
    source = (grid.lengths * u.values)[:, None] * ops.psi[None, :]
    return SpaceTimeField(grid, march_forward(grid, ops, source, y0))


def solve_adjoint(rhs: SpaceTimeField, ops: FemOperators) -> SpaceTimeField:
    """Discrete adjoint for the tracking term with right-hand side ``rhs = y - y_d``."""
    grid = rhs.grid
    source = grid.lengths[:, None] * ops.mass(rhs.values.T).T
    return SpaceTimeField(grid, march_backward(grid, ops, source))


def apply_psi_star(p: SpaceTimeField, ops: FemOperators) -> PiecewiseConstantFn:
    """``t ↦ ψ_hᵀ p_l``: the L2(0,T) Riesz representative of ``Ψ*``."""
    return PiecewiseConstantFn(p.grid, p.values @ ops.psi)


def tracking_term(y: SpaceTimeField, y_d: SpaceTimeField, ops: FemOperators) -> float:
    """``½ ‖y - y_d‖²_{L2(Q)}`` exactly, with ``y_d`` on any temporal grid."""
    grid = y.grid
    yv = y.values
    My = ops.mass(yv.T).T
    yy = np.sum(grid.lengths * np.einsum("li,li->l", yv, My))
    yd_int = y_d.integrals(grid)
    cross = np.sum(np.einsum("li,li->l", My, yd_int))
    return 0.5 * float(yy - 2.0 * cross + y_d.norm2(ops))


def objective(
    y: SpaceTimeField,
    u: PiecewiseConstantFn,
    y_d: SpaceTimeField,
    alpha: float,
    ops: FemOperators,
) -> float:
    """``J(y,u) = ½‖y - y_d‖² + α/2 ‖u - ½‖²`` evaluated exactly."""
    _check_grid(u, y.grid)
    reg = 0.5 * alpha * float(np.sum(u.grid.lengths * (u.values - 0.5) ** 2))
    return tracking_term(y, y_d, ops) + reg


@dataclass
class HeatProblem:
    """Data shared by all subproblems: operators, desired state, initial state, Tikhonov weight."""

    ops: FemOperators
    y_d: SpaceTimeField
    alpha: float = 0.005
    y0: Optional[np.ndarray] = None
    _zeta: dict = field(default_factory=dict, repr=False)
    _hessians: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.y0 is None:
            self.y0 = np.zeros(self.ops.n)
        if self.alpha < 0:
            raise ValueError("alpha must be nonnegative")

    @property
    def horizon(self) -> float:
        return self.y_d.grid.horizon

    def state(self, u: PiecewiseConstantFn) -> SpaceTimeField:
        return solve_state(u, self.y0, self.ops)

    def adjoint(self, y: SpaceTimeField) -> SpaceTimeField:
        return solve_adjoint(y - self.y_d.on(y.grid), self.ops)

    def objective(self, u: PiecewiseConstantFn, y: SpaceTimeField | None = None) -> float:
        y = self.state(u) if y is None else y
        return objective(y, u, self.y_d, self.alpha, self.ops)

    def zeta(self, grid: TemporalGrid) -> SpaceTimeField:
        """Free response to the initial state, cached per grid."""
        key = grid.key()
        if key not in self._zeta:
            src = np.zeros((grid.n_cells, self.ops.n))
            self._zeta[key] = SpaceTimeField(grid, march_forward(grid, self.ops, src, self.y0))
        return self._zeta[key]

    def hessian(self, grid: TemporalGrid) -> np.ndarray:
        """Coordinate Hessian ``H = Bᵀ W B`` of the tracking term (cached per grid).

        ``uᵀ H u = ‖ΣΨu‖²_{L2(Q)}``; ``H`` equals ``diag(s) · Ψ*Σ*ΣΨ``.
        """
        key = grid.key()
        H = self._hessians.get(key)
        if H is None:
            H = self._hessians[key] = assemble_hessian(grid, self.ops)
            if len(self._hessians) > 64:
                self._hessians.pop(next(iter(self._hessians)))
        return H

    def hessian_matvec(self, grid: TemporalGrid, u: np.ndarray) -> np.ndarray:
        """Matrix-free ``diag(s) Ψ*Σ*ΣΨ u``: one forward and one adjoint solve."""
        src = (grid.lengths * u)[:, None] * self.ops.psi[None, :]
        y = march_forward(grid, self.ops, src, np.zeros(self.ops.n))
        p = solve_adjoint(SpaceTimeField(grid, y), self.ops)
        return grid.lengths * (p.values @ self.ops.psi)


def assemble_hessian(grid: TemporalGrid, ops: FemOperators) -> np.ndarray:
    """Dense ``H[i, j] = ⟨ΣΨe_i, ΣΨe_j⟩_{L2(Q)}`` via the spatial eigenbasis.

    In modal coordinates each mode follows ``ŷ_l = ρ_l (ŷ_{l-1} + s_l ψ̂ u_l)``
    with ``ρ_l = 1 / (1 + s_l λ)``; the resulting Gram matrix is semiseparable,
    so ``H`` costs O(n L²) instead of O(n L³).
    """
    lam, V = ops.modes
    psi_hat = V.T @ ops.psi
    s = grid.lengths
    L = s.size
    H = np.zeros((L, L))
    for lam_k, ph in zip(lam, psi_hat):
        if ph == 0.0:
            continue
        rho = 1.0 / (1.0 + s * lam_k)
        # c_j = Σ_{l>=j} s_l Π_{m=j..l} ρ_m²
        c = np.empty(L)
        acc = 0.0
        for j in range(L - 1, -1, -1):
            acc = rho[j] ** 2 * (s[j] + acc)
            c[j] = acc
        logr = np.concatenate([[0.0], np.cumsum(np.log(rho))])
        # E[i, j] = Π_{m=i}^{j-1} ρ_m for i <= j
        E = np.exp(np.minimum(logr[None, :L] - logr[:L, None], 0.0))
        upper = E * c[None, :]
        Hk = np.triu(upper)
        Hk = Hk + np.triu(Hk, 1).T
        H += ph**2 * Hk
    H *= s[:, None] * s[None, :]
    return 0.5 * (H + H.T)
