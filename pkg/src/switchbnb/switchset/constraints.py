"""Switching constraints, point fixings and their propagation to fixed regions."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Optional, Sequence

import numpy as np

from ..timegrid import NODE_TOL, AveragingPartition, MisalignmentError, TemporalGrid


class Infeasible(Exception):
    """No binary control satisfies the switching constraint together with the fixings."""


@dataclass(frozen=True)
class MaxSwitchings:
    """Total variation bound ``|u|_BV <= sigma``.

    With ``count_initial`` the control is assumed to start at 0, so turning
    it on at ``t = 0`` already costs one switching.
    """

    sigma: int
    count_initial: bool = True

    def __post_init__(self):
        if int(self.sigma) != self.sigma or self.sigma < 1:
            raise ValueError("sigma must be a positive integer")


@dataclass(frozen=True)
class MinDwell:
    """Consecutive switchings are at least ``s`` apart."""

    s: float
    horizon: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.s <= self.horizon:
            raise ValueError("dwell time must lie in (0, T]")

    @property
    def implicit_sigma(self) -> int:
        return int(math.ceil(self.horizon / self.s - 1e-12))


SwitchingConstraint = MaxSwitchings | MinDwell


@dataclass(frozen=True)
class FixingSet:
    """Point fixings ``u(tau_j) = c_j`` sorted by time."""

    taus: tuple = ()
    bits: tuple = ()

    def __post_init__(self):
        taus = tuple(float(t) for t in self.taus)
        bits = tuple(int(c) for c in self.bits)
        if len(taus) != len(bits):
            raise ValueError("taus and bits differ in length")
        if any(c not in (0, 1) for c in bits):
            raise ValueError("fixing bits must be 0 or 1")
        if any(t1 <= t0 for t0, t1 in zip(taus, taus[1:])):
            raise ValueError("fixing times must be strictly increasing")
        if taus and taus[0] < 0.0:
            raise ValueError("fixing times must be nonnegative")
        object.__setattr__(self, "taus", taus)
        object.__setattr__(self, "bits", bits)

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple]) -> "FixingSet":
        pairs = sorted((float(t), int(c)) for t, c in pairs)
        return cls(tuple(t for t, _ in pairs), tuple(c for _, c in pairs))

    def __len__(self):
        return len(self.taus)

    def __iter__(self):
        return iter(zip(self.taus, self.bits))

    def with_fixing(self, tau: float, bit: int) -> "FixingSet":
        if any(abs(tau - t) <= NODE_TOL for t in self.taus):
            raise ValueError(f"time {tau} is already fixed")
        return FixingSet.from_pairs(list(self) + [(tau, bit)])

    def has(self, tau: float) -> bool:
        return any(abs(tau - t) <= NODE_TOL * max(1.0, abs(tau)) for t in self.taus)

    def check_on_grid(self, grid: TemporalGrid):
        for t in self.taus:
            grid.node_index(t)
            if t >= grid.horizon:
                raise MisalignmentError("fixings must lie strictly before T")


@dataclass(frozen=True)
class Propagation:
    """Result of propagating fixings: fixed intervals ``[lo, hi)`` with their bits."""

    feasible: bool
    fixed: tuple = ()
    budget: Optional[int] = None
    horizon: float = 1.0

    def cell_bits(self, grid: TemporalGrid) -> np.ndarray:
        """Per-cell fixed bit, ``-1`` for free cells."""
        out = np.full(grid.n_cells, -1, dtype=int)
        mids = 0.5 * (grid.nodes[:-1] + grid.nodes[1:])
        for (lo, hi), c in self.fixed:
            out[(mids > lo) & (mids < hi)] = c
        return out

    def free_mask(self, grid: TemporalGrid) -> np.ndarray:
        return self.cell_bits(grid) < 0

    def fixed_measure(self) -> float:
        return float(sum(hi - lo for (lo, hi), _ in self.fixed))


def _merge(intervals: list) -> tuple:
    intervals = sorted(intervals)
    out = []
    for (lo, hi), c in intervals:
        if out and out[-1][1] == c and lo <= out[-1][0][1] + NODE_TOL:
            (plo, phi), _ = out[-1]
            out[-1] = ((plo, max(phi, hi)), c)
        else:
            out.append(((lo, hi), c))
    return tuple(out)


def switches_enforced(fx: FixingSet, count_initial: bool = True) -> int:
    """Changes along the fixing sequence, including the virtual leading zero if requested."""
    seq = ([0] if count_initial else []) + list(fx.bits)
    return sum(a != b for a, b in zip(seq, seq[1:]))


def propagate(
    fx: FixingSet, c: SwitchingConstraint, grid: TemporalGrid | None = None
) -> Propagation:
    """Derive the region on which every feasible control is constant."""
    if grid is not None:
        fx.check_on_grid(grid)
    T = grid.horizon if grid is not None else getattr(c, "horizon", 1.0)
    if isinstance(c, MaxSwitchings):
        return _propagate_maxswitch(fx, c, T)
    if isinstance(c, MinDwell):
        return _propagate_dwell(fx, c, T)
    raise TypeError(f"unknown constraint {c!r}")


def _propagate_maxswitch(fx: FixingSet, c: MaxSwitchings, T: float) -> Propagation:
    n_req = switches_enforced(fx, c.count_initial)
    if n_req > c.sigma:
        return Propagation(False, (), c.sigma - n_req, T)
    fixed = []
    if n_req >= c.sigma - 1 and len(fx):
        taus = ([0.0] if c.count_initial else []) + list(fx.taus)
        bits = ([0] if c.count_initial else []) + list(fx.bits)
        for k in range(1, len(taus)):
            if bits[k - 1] == bits[k] and taus[k] > taus[k - 1]:
                fixed.append(((taus[k - 1], taus[k]), bits[k]))
        if n_req == c.sigma:
            if fx.taus[-1] < T:
                fixed.append(((fx.taus[-1], T), fx.bits[-1]))
            if not c.count_initial and fx.taus[0] > 0.0:
                fixed.append(((0.0, fx.taus[0]), fx.bits[0]))
    return Propagation(True, _merge(fixed), c.sigma - n_req, T)


def _propagate_dwell(fx: FixingSet, c: MinDwell, T: float) -> Propagation:
    from .oracles import dwell_feasible

    if not dwell_feasible(fx, c.s, T):
        return Propagation(False, (), None, T)
    fixed = []
    tol = NODE_TOL * max(1.0, T)
    if len(fx) and fx.bits[0] == 0 and 0.0 < fx.taus[0] < c.s - tol:
        # starting at 0, leaving and returning before tau_1 is impossible
        fixed.append(((0.0, fx.taus[0]), 0))
    for (t0, b0), (t1, b1) in zip(fx, list(fx)[1:]):
        if b0 == b1 and t1 - t0 <= c.s + tol:
            fixed.append(((t0, t1), b0))
    return Propagation(True, _merge(fixed), None, T)


def insertion_points(fx: FixingSet, partition: AveragingPartition) -> list:
    """``i_j``: number of averaging intervals ending at or before ``tau_j``."""
    tol = NODE_TOL
    starts, ends = partition.starts, partition.ends
    out = []
    for t in fx.taus:
        inside = (starts < t - tol) & (ends > t + tol)
        if np.any(inside):
            raise MisalignmentError(f"fixing at {t} lies inside an averaging interval")
        out.append(int(np.sum(ends <= t + tol)))
    return out


def extended_positions(fx: FixingSet, partition: AveragingPartition) -> np.ndarray:
    """Positions (0-based) of the fixing coordinates inside the extended vector."""
    ij = insertion_points(fx, partition)
    return np.array([i + j for j, i in enumerate(ij)], dtype=int)


def embed(v: np.ndarray, fx: FixingSet, partition: AveragingPartition) -> np.ndarray:
    """Insert the fixing bits into ``v`` at their chronological positions."""
    v = np.asarray(v, dtype=float)
    if v.shape != (partition.size,):
        raise ValueError("vector length does not match the partition")
    pos = extended_positions(fx, partition)
    out = np.empty(v.size + len(fx))
    mask = np.ones(out.size, dtype=bool)
    mask[pos] = False
    out[mask] = v
    out[pos] = fx.bits
    return out


def delete(
    a: np.ndarray, b: float, fx: FixingSet, partition: AveragingPartition
) -> tuple:
    """Drop fixing coordinates from a cut ``a w <= b`` on the extended space.

    Returns ``(a_reduced, b - sum_j a[pos_j] c_j)``.
    """
    a = np.asarray(a, dtype=float)
    pos = extended_positions(fx, partition)
    mask = np.ones(a.size, dtype=bool)
    mask[pos] = False
    b_bar = float(b - np.dot(a[pos], np.asarray(fx.bits, dtype=float)))
    return a[mask], b_bar
