"""Temporal partitions, cell-wise constant functions and local averaging."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

# Relative tolerance used to decide whether two time points coincide.
NODE_TOL = 1e-12


class MisalignmentError(ValueError):
    """An interval endpoint or fixing point does not sit on a grid node."""


@dataclass(frozen=True, eq=False)
class TemporalGrid:
    """Partition ``0 = t_0 < ... < t_L = T`` with cells ``J_l = (t_{l-1}, t_l]``."""

    nodes: np.ndarray

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        if nodes.ndim != 1 or nodes.size < 2:
            raise ValueError("a grid needs at least two nodes")
        if nodes[0] != 0.0:
            raise ValueError("first node must be 0")
        if np.any(np.diff(nodes) <= 0):
            raise ValueError("nodes must be strictly increasing")
        nodes.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)

    @classmethod
    def uniform(cls, n_cells: int, horizon: float = 1.0) -> "TemporalGrid":
        return cls(np.linspace(0.0, horizon, n_cells + 1))

    @property
    def horizon(self) -> float:
        return float(self.nodes[-1])

    @property
    def n_cells(self) -> int:
        return self.nodes.size - 1

    @property
    def lengths(self) -> np.ndarray:
        return np.diff(self.nodes)

    @property
    def max_length(self) -> float:
        return float(self.lengths.max())

    def node_index(self, t: float) -> int:
        """Index of the node equal to ``t``; raises if ``t`` is not a node."""
        tol = NODE_TOL * max(1.0, self.horizon)
        k = int(np.searchsorted(self.nodes, t - tol))
        if k < self.nodes.size and abs(self.nodes[k] - t) <= tol:
            return k
        raise MisalignmentError(f"time {t!r} is not a node of the grid")

    def has_node(self, t: float) -> bool:
        try:
            self.node_index(t)
        except MisalignmentError:
            return False
        return True

    def cell_of(self, t: float) -> int:
        """Cell index ``l`` (0-based) with ``t`` in ``(t_l, t_{l+1}]``; ``t=0`` maps to cell 0."""
        k = int(np.searchsorted(self.nodes, t, side="left")) - 1
        return min(max(k, 0), self.n_cells - 1)

    def contains(self, other: "TemporalGrid") -> bool:
        """True if every node of ``other`` is a node of this grid."""
        return all(self.has_node(t) for t in other.nodes)

    def key(self) -> tuple:
        return tuple(self.nodes.tolist())

    def __eq__(self, other):
        if not isinstance(other, TemporalGrid):
            return NotImplemented
        return self.nodes.shape == other.nodes.shape and bool(np.all(self.nodes == other.nodes))

    def __hash__(self):
        return hash(self.key())

    def __repr__(self):
        return f"TemporalGrid(L={self.n_cells}, T={self.horizon:g}, s_max={self.max_length:.4g})"


def refine(grid: TemporalGrid, cells: Iterable[int]) -> TemporalGrid:
    """Bisect the selected cells at their midpoints."""
    cells = sorted(set(int(c) for c in cells))
    if not cells:
        raise ValueError("refine needs at least one cell")
    if cells[0] < 0 or cells[-1] >= grid.n_cells:
        raise IndexError("cell index out of range")
    mids = 0.5 * (grid.nodes[cells] + grid.nodes[np.asarray(cells) + 1])
    return TemporalGrid(np.sort(np.concatenate([grid.nodes, mids])))


def refinement_parents(coarse: TemporalGrid, fine: TemporalGrid) -> np.ndarray:
    """For each cell of ``fine`` the index of the ``coarse`` cell containing it."""
    mids = 0.5 * (fine.nodes[:-1] + fine.nodes[1:])
    parents = np.searchsorted(coarse.nodes, mids) - 1
    return np.clip(parents, 0, coarse.n_cells - 1)


def overlap_matrix(src: TemporalGrid, dst: TemporalGrid) -> np.ndarray:
    """``O[l, k] = |J^dst_l ∩ J^src_k|`` for arbitrary (not necessarily nested) grids."""
    lo = np.maximum(dst.nodes[:-1, None], src.nodes[None, :-1])
    hi = np.minimum(dst.nodes[1:, None], src.nodes[None, 1:])
    return np.clip(hi - lo, 0.0, None)


@dataclass(frozen=True, eq=False)
class PiecewiseConstantFn:
    """One value per cell of ``grid``."""

    grid: TemporalGrid
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.shape != (self.grid.n_cells,):
            raise ValueError(
                f"expected {self.grid.n_cells} cell values, got shape {values.shape}"
            )
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @classmethod
    def constant(cls, grid: TemporalGrid, c: float) -> "PiecewiseConstantFn":
        return cls(grid, np.full(grid.n_cells, float(c)))

    def l1_norm(self) -> float:
        return float(np.sum(self.grid.lengths * np.abs(self.values)))

    def l2_norm(self) -> float:
        return float(np.sqrt(np.sum(self.grid.lengths * self.values**2)))

    def inner(self, other: "PiecewiseConstantFn") -> float:
        if other.grid != self.grid:
            raise ValueError("grids differ")
        return float(np.sum(self.grid.lengths * self.values * other.values))

    def __call__(self, t: float) -> float:
        """Right-continuous evaluation of the cell representative."""
        nodes = self.grid.nodes
        k = int(np.searchsorted(nodes, t, side="right")) - 1
        return float(self.values[min(max(k, 0), self.grid.n_cells - 1)])

    def on(self, fine: TemporalGrid) -> "PiecewiseConstantFn":
        """Exact cell averages of this function on another grid."""
        if fine == self.grid:
            return self
        ov = overlap_matrix(self.grid, fine)
        return PiecewiseConstantFn(fine, ov @ self.values / fine.lengths)

    def is_binary(self, tol: float = 0.0) -> bool:
        v = self.values
        return bool(np.all((np.abs(v) <= tol) | (np.abs(v - 1.0) <= tol)))

    def switch_count(self, count_initial: bool = True) -> int:
        """Number of 0/1 jumps of a binary control (virtual leading zero if ``count_initial``)."""
        v = np.round(self.values).astype(int)
        jumps = int(np.sum(v[1:] != v[:-1]))
        if count_initial and v[0] == 1:
            jumps += 1
        return jumps


@dataclass(frozen=True)
class AveragingPartition:
    """Disjoint ordered intervals ``I_i = (a_i, b_i)`` defining ``Π``."""

    intervals: tuple

    def __post_init__(self):
        ivs = tuple((float(a), float(b)) for a, b in self.intervals)
        for (a, b) in ivs:
            if not b > a:
                raise ValueError("empty averaging interval")
        for (_, b0), (a1, _) in zip(ivs, ivs[1:]):
            if a1 < b0 - NODE_TOL:
                raise ValueError("averaging intervals must be disjoint and ordered")
        object.__setattr__(self, "intervals", ivs)

    @classmethod
    def from_grid(cls, grid: TemporalGrid) -> "AveragingPartition":
        return cls(tuple(zip(grid.nodes[:-1].tolist(), grid.nodes[1:].tolist())))

    @property
    def size(self) -> int:
        return len(self.intervals)

    @property
    def starts(self) -> np.ndarray:
        return np.array([a for a, _ in self.intervals])

    @property
    def ends(self) -> np.ndarray:
        return np.array([b for _, b in self.intervals])

    @property
    def lengths(self) -> np.ndarray:
        return self.ends - self.starts

    def matrix(self, grid: TemporalGrid) -> np.ndarray:
        """Matrix ``P`` (M x L) with ``project(u) = P @ u.values``."""
        for a, b in self.intervals:
            if not (grid.has_node(a) and grid.has_node(b)):
                raise MisalignmentError(
                    f"interval ({a}, {b}) is not resolved by {grid!r}"
                )
        part_grid_lo = self.starts[:, None]
        part_grid_hi = self.ends[:, None]
        lo = np.maximum(part_grid_lo, grid.nodes[None, :-1])
        hi = np.minimum(part_grid_hi, grid.nodes[None, 1:])
        ov = np.clip(hi - lo, 0.0, None)
        return ov / self.lengths[:, None]


def project(u: PiecewiseConstantFn, partition: AveragingPartition) -> np.ndarray:
    """Local averages of ``u`` over the partition intervals."""
    return partition.matrix(u.grid) @ u.values


class PiecewiseLinearFn:
    """Continuous piecewise linear function in time given by nodal values.

    Nodal values may be vectors (e.g. spatial coefficient arrays), stored
    with time along the first axis.
    """

    def __init__(self, grid: TemporalGrid, node_values: np.ndarray):
        node_values = np.asarray(node_values, dtype=float)
        if node_values.shape[0] != grid.nodes.size:
            raise ValueError("need one value per grid node")
        self.grid = grid
        self.node_values = node_values

    def __call__(self, t: float) -> np.ndarray:
        nodes = self.grid.nodes
        k = min(max(int(np.searchsorted(nodes, t, side="right")) - 1, 0), self.grid.n_cells - 1)
        theta = (t - nodes[k]) / (nodes[k + 1] - nodes[k])
        return (1.0 - theta) * self.node_values[k] + theta * self.node_values[k + 1]

    @property
    def left(self) -> np.ndarray:
        """Value at the left end of each cell."""
        return self.node_values[:-1]

    @property
    def right(self) -> np.ndarray:
        """Value at the right end of each cell."""
        return self.node_values[1:]


def interpolate_linear(
    cell_values: np.ndarray,
    grid: TemporalGrid,
    anchor: np.ndarray | float,
    at: str = "right",
) -> PiecewiseLinearFn:
    """Piecewise linear interpolant of cell-wise values.

    ``at="right"`` places value ``l`` at ``t_l`` and ``anchor`` at ``t_0``
    (forward/state convention); ``at="left"`` places value ``l`` at
    ``t_{l-1}`` and ``anchor`` at ``T`` (backward/adjoint convention).
    """
    cell_values = np.asarray(cell_values, dtype=float)
    if cell_values.shape[0] != grid.n_cells:
        raise ValueError("need one value per cell")
    anchor = np.broadcast_to(np.asarray(anchor, dtype=float), cell_values.shape[1:])[None]
    if at == "right":
        nv = np.concatenate([anchor, cell_values], axis=0)
    elif at == "left":
        nv = np.concatenate([cell_values, anchor], axis=0)
    else:
        raise ValueError("at must be 'left' or 'right'")
    return PiecewiseLinearFn(grid, nv)


def cell_gauss(order: int = 3) -> tuple:
    """Gauss-Legendre points/weights on the reference cell ``θ ∈ [0, 1]``."""
    x, w = np.polynomial.legendre.leggauss(order)
    return 0.5 * (x + 1.0), 0.5 * w


def merge_nodes(grid: TemporalGrid, times: Sequence[float]) -> TemporalGrid:
    """Grid with ``times`` added as nodes (used for controls switching off-grid)."""
    tol = NODE_TOL * max(1.0, grid.horizon)
    extra = [t for t in times if 0.0 < t < grid.horizon and not grid.has_node(t)]
    if not extra:
        return grid
    nodes = np.sort(np.concatenate([grid.nodes, extra]))
    keep = np.concatenate([[True], np.diff(nodes) > tol])
    return TemporalGrid(nodes[keep])
