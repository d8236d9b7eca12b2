"""Linear optimization over projected switching polytopes by dynamic programming."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from ..timegrid import AveragingPartition, PiecewiseConstantFn, TemporalGrid, merge_nodes
from .constraints import FixingSet, Infeasible

INF = math.inf
# points of the shift set closer than this are identified
SHIFT_TOL = 1e-9


def optimize_maxswitch(
    cost: Sequence[float],
    sigma: int,
    count_initial: bool = True,
    fixed: Optional[dict] = None,
) -> tuple:
    """Minimize ``cost @ w`` over binary ``w`` with at most ``sigma`` changes.

    Parameters
    ----------
    cost : array of length n
    sigma : switching budget
    count_initial : if True a virtual leading 0 is prepended, so ``w[0] = 1`` uses one switch
    fixed : mapping position -> prescribed bit

    Returns
    -------
    (w, value)
        Ties are broken by keeping the previous bit, otherwise by preferring 0.
    """
    cost = np.asarray(cost, dtype=float)
    n = cost.size
    fixed = fixed or {}
    allowed = np.ones((n, 2), dtype=bool)
    for pos, bit in fixed.items():
        allowed[pos, 1 - int(bit)] = False

    # V[l, b, k]: best cost of positions l.. given previous bit b and k switches spent
    V = np.full((n + 1, 2, sigma + 2), INF)
    V[n, :, : sigma + 1] = 0.0
    for l in range(n - 1, -1, -1):
        for b in (0, 1):
            best = np.full(sigma + 2, INF)
            for w in (0, 1):
                if not allowed[l, w]:
                    continue
                nxt = V[l + 1, w]
                if w != b:
                    nxt = np.concatenate([nxt[1:], [INF]])
                best = np.minimum(best, cost[l] * w + nxt)
            V[l, b] = best

    # ties up to rounding of the running sums
    tol = 4.0 * (n + 1) * np.finfo(float).eps * np.abs(cost).sum()

    def total(l, b, k, w):
        if not allowed[l, w]:
            return INF
        k2 = k + (w != b)
        if k2 > sigma:
            return INF
        return cost[l] * w + V[l + 1, w, k2]

    w_out = np.zeros(n, dtype=int)
    if n == 0:
        return w_out, 0.0
    if count_initial:
        b, k = 0, 0
        value = V[0, 0, 0]
    else:
        # the first coordinate is free of charge: pretend the previous bit equals it
        v0 = total(0, 0, 0, 0)
        v1 = total(0, 1, 0, 1)
        value = min(v0, v1)
        b = 0 if v0 <= v1 + tol else 1
        k = 0
    if not np.isfinite(value):
        raise Infeasible("fixings exceed the switching budget")
    for l in range(n):
        keep = total(l, b, k, b)
        flip = total(l, b, k, 1 - b)
        if l == 0 and not count_initial:
            w = b
        elif keep <= flip + tol:
            w = b
        else:
            w = 1 - b
        k += w != b
        b = w
        w_out[l] = w
    return w_out, float(cost @ w_out)


def shift_set(points: Sequence[float], s: float, horizon: float) -> np.ndarray:
    """All ``x + m s`` (integer ``m``) inside ``[0, T]`` for the given base points."""
    base = np.unique(np.concatenate([[0.0, horizon], np.asarray(points, dtype=float)]))
    cand = [(x, 0) for x in base]
    for x in base:
        m_lo = math.ceil((-x - SHIFT_TOL) / s)
        m_hi = math.floor((horizon - x + SHIFT_TOL) / s)
        for m in range(m_lo, m_hi + 1):
            if m != 0:
                cand.append((min(max(x + m * s, 0.0), horizon), 1))
    cand.sort()
    out = []
    for val, prio in cand:
        if out and val - out[-1][0] <= SHIFT_TOL:
            if prio < out[-1][1]:
                out[-1] = (val, prio)
            continue
        out.append((val, prio))
    return np.array([v for v, _ in out])


@dataclass(frozen=True)
class SwitchingControl:
    """Binary control starting at 0 that toggles at ``times``; right-continuous."""

    times: tuple
    horizon: float = 1.0

    def __call__(self, t: float) -> int:
        return int(sum(1 for x in self.times if x <= t) % 2)

    def on_grid(self, grid: TemporalGrid) -> PiecewiseConstantFn:
        """Exact cell averages on ``grid`` (binary if all switches are grid nodes)."""
        return PiecewiseConstantFn(grid, _on_measure(self.times, grid.nodes[:-1], grid.nodes[1:]))

    def as_binary(self, grid: TemporalGrid) -> PiecewiseConstantFn:
        """Represent as a binary cell function on ``grid`` merged with the switching times."""
        fine = merge_nodes(grid, self.times)
        return PiecewiseConstantFn(fine, np.round(_on_measure(self.times, fine.nodes[:-1], fine.nodes[1:])))

    def project(self, partition: AveragingPartition) -> np.ndarray:
        return _on_measure(self.times, partition.starts, partition.ends)


def _on_measure(times, lo, hi) -> np.ndarray:
    """Fraction of each ``[lo_i, hi_i]`` on which the control equals 1."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    on = np.zeros_like(lo)
    ts = list(times) + [INF]
    if len(ts) % 2 == 0:
        ts.append(INF)
    for a, b in zip(ts[0::2], ts[1::2]):
        on += np.clip(np.minimum(hi, b) - np.maximum(lo, a), 0.0, None)
    return on / (hi - lo)


@dataclass(frozen=True)
class DwellResult:
    control: SwitchingControl
    projected: np.ndarray
    value: float


@dataclass
class DwellPlan:
    """Cost-independent data of the dwell-time recursion for one node.

    Build once with :meth:`build` and pass to :func:`optimize_dwell` when
    the oracle is called repeatedly with the same fixings and partition.
    """

    s: float
    horizon: float
    partition: AveragingPartition | None
    omega: np.ndarray
    frac: np.ndarray
    fix_at: dict
    cnt: np.ndarray
    back: list

    @classmethod
    def build(cls, s: float, fx: FixingSet, partition: AveragingPartition | None, horizon: float = 1.0) -> "DwellPlan":
        if s <= 0:
            raise ValueError("dwell time must be positive")
        base = list(fx.taus)
        if partition is not None:
            base = base + list(partition.starts) + list(partition.ends)
        omega = shift_set(base, s, horizon)
        K = omega.size
        if partition is None or partition.size == 0:
            frac = np.zeros((K, 0))
        else:
            a, b = partition.starts, partition.ends
            frac = np.clip(np.minimum(omega[:, None], b[None, :]) - a[None, :], 0.0, None) / (b - a)[None, :]
        fix_at = {}
        for t, c in fx:
            k = int(np.argmin(np.abs(omega - t)))
            if abs(omega[k] - t) > SHIFT_TOL:
                raise RuntimeError("fixing point missing from shift set")
            fix_at[k] = c
        # cnt[b][k]: number of fixings with bit b at indices < k
        cnt = np.zeros((2, K + 1), dtype=int)
        for k in range(K):
            cnt[:, k + 1] = cnt[:, k]
            if k in fix_at:
                cnt[fix_at[k], k + 1] += 1
        back = []
        for k in range(K):
            t = omega[k] - s
            a = int(np.searchsorted(omega, t - SHIFT_TOL))
            ok = t >= -SHIFT_TOL and a < K and abs(omega[a] - t) <= SHIFT_TOL
            back.append(a if ok else None)
        return cls(s, horizon, partition, omega, frac, fix_at, cnt, back)


def optimize_dwell(
    cost: Sequence[float] | None,
    s: float,
    fx: FixingSet,
    partition: AveragingPartition | None,
    horizon: float = 1.0,
    plan: DwellPlan | None = None,
) -> DwellResult:
    """Minimize ``cost @ Pi(u)`` over controls with minimum dwell time ``s`` and point fixings.

    Feasibility is understood in the closure sense: a fixing ``u(tau) = c``
    is met if ``u`` equals ``c`` just before or just after ``tau``, as long
    as the switching point can be nudged to the correct side without
    violating a dwell constraint elsewhere. Switchings are restricted to the
    shift set, which contains an optimal solution.

    The recursion runs over ``(point, bit after the point, pushed)`` where
    ``pushed`` records that a switching sits exactly at the point and must
    be nudged to the right. A switching exactly ``s`` later then has to be
    nudged as well.
    """
    if plan is None:
        plan = DwellPlan.build(s, fx, partition, horizon)
    omega, fix_at, cnt = plan.omega, plan.fix_at, plan.cnt
    K = omega.size
    F = plan.frac @ np.asarray(cost, dtype=float) if plan.frac.shape[1] else np.zeros(K)

    def fixes_inside(b, lo, hi):
        """Fixings of bit ``b`` at indices strictly between ``lo`` and ``hi``."""
        return cnt[b, hi] - cnt[b, lo + 1] > 0

    val = np.full((K, 2, 2), INF)
    pred = {}

    def push_flag(k, b, forced):
        c = fix_at.get(k)
        if c is None:
            return forced
        if c == b:
            return None if forced else 0
        return 1

    # t = 0: stay at the initial 0, or switch on right away
    if fix_at.get(0) != 1:
        val[0, 0, 0] = 0.0
        pred[(0, 0, 0)] = ("start",)
    f0 = push_flag(0, 1, 0)
    val[0, 1, f0] = 0.0
    pred[(0, 1, f0)] = ("switch0",)

    for k in range(1, K):
        seg = F[k] - F[k - 1]
        a = plan.back[k]
        for b in (0, 1):
            cands = []
            # keep the bit through (omega_{k-1}, omega_k]
            if fix_at.get(k, b) == b:
                for f in (0, 1):
                    cands.append((val[k - 1, b, f] + b * seg, 0, ("stay", k - 1, b, f)))
            # switch into b at omega_k after holding 1-b for exactly s
            if a is not None and not fixes_inside(b, a, k):
                hold = (1 - b) * (F[k] - F[a])
                for f in (0, 1):
                    nf = push_flag(k, b, f)
                    if nf is not None:
                        cands.append((val[a, 1 - b, f] + hold, nf, ("switch", a, 1 - b, f)))
            # first switching, closer than s to the start
            if b == 1 and omega[k] < s - SHIFT_TOL and cnt[1, k] == 0:
                nf = push_flag(k, 1, 0)
                cands.append((0.0, nf, ("first",)))
            for v, nf, p in cands:
                if v < val[k, b, nf]:
                    val[k, b, nf] = v
                    pred[(k, b, nf)] = p

    last = val[K - 1]
    best = float(np.min(last))
    if not np.isfinite(best):
        raise Infeasible("no control satisfies the dwell time and the fixings")
    b, f = (int(i) for i in np.unravel_index(int(np.argmin(last)), last.shape))

    times = []
    k = K - 1
    while True:
        p = pred[(k, b, f)]
        if p[0] == "stay":
            k, b, f = p[1], p[2], p[3]
        elif p[0] == "switch":
            times.append(float(omega[k]))
            k, b, f = p[1], p[2], p[3]
        elif p[0] == "first":
            times.append(float(omega[k]))
            break
        elif p[0] == "switch0":
            times.append(0.0)
            break
        else:
            break
    # a switching at T has no effect on the control
    times = [t for t in times if t < horizon - SHIFT_TOL]
    ctrl = SwitchingControl(tuple(sorted(times)), horizon)
    projected = ctrl.project(partition) if partition is not None else np.zeros(0)
    value = float(np.dot(np.asarray(cost, dtype=float), projected)) if partition is not None and partition.size else 0.0
    return DwellResult(ctrl, projected, value)


def dwell_feasible(fx: FixingSet, s: float, horizon: float = 1.0) -> bool:
    try:
        optimize_dwell(None, s, fx, None, horizon)
    except Infeasible:
        return False
    return True
