import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

import bruteforce as bf
from switchbnb.switchset import (
    CuttingPlane,
    DwellPlan,
    FixingSet,
    Infeasible,
    MaxSwitchings,
    MinDwell,
    SeparationContext,
    SwitchingControl,
    delete,
    embed,
    extended_positions,
    optimize_dwell,
    optimize_maxswitch,
    propagate,
    round_cia,
    separate,
    separate_with_info,
    shift_set,
    switches_enforced,
    total_variation,
)
from switchbnb.timegrid import AveragingPartition, MisalignmentError, PiecewiseConstantFn, TemporalGrid


def fixings_strategy(n_nodes, max_fix=4):
    """Fixings on interior-or-zero nodes ``k / n_nodes`` for ``k < n_nodes``."""
    return st.lists(
        st.tuples(st.integers(0, n_nodes - 1), st.integers(0, 1)), max_size=max_fix, unique_by=lambda p: p[0]
    ).map(lambda ps: FixingSet.from_pairs([(k / n_nodes, c) for k, c in ps]))


class TestConstraintTypes:
    def test_validation(self):
        with pytest.raises(ValueError):
            MaxSwitchings(0)
        with pytest.raises(ValueError):
            MinDwell(0.0)
        with pytest.raises(ValueError):
            MinDwell(1.5)

    def test_implicit_sigma(self):
        assert MinDwell(0.3).implicit_sigma == 4
        assert MinDwell(0.25).implicit_sigma == 4

    def test_fixing_set(self):
        fx = FixingSet.from_pairs([(0.5, 1), (0.25, 0)])
        assert fx.taus == (0.25, 0.5) and fx.bits == (0, 1)
        with pytest.raises(ValueError):
            fx.with_fixing(0.5, 0)
        with pytest.raises(ValueError):
            FixingSet((0.1, 0.1), (0, 1))
        with pytest.raises(ValueError):
            FixingSet((0.1,), (2,))
        assert switches_enforced(fx, True) == 1
        assert switches_enforced(FixingSet((0.1, 0.2), (1, 0)), False) == 1


class TestPropagateMaxSwitch:
    def test_two_enforced_switchings_infeasible(self):
        fx = FixingSet.from_pairs([(0.3, 1), (0.6, 0)])
        g = TemporalGrid.uniform(10)
        assert not propagate(fx, MaxSwitchings(1), g).feasible
        assert bf.feasible_cell_patterns(g, 1, fx).shape[0] == 0

    def test_one_below_budget(self):
        fx = FixingSet.from_pairs([(0.25, 1), (0.5, 1)])
        g = TemporalGrid.uniform(8)
        prop = propagate(fx, MaxSwitchings(2), g)
        assert prop.feasible
        assert ((0.25, 0.5), 1) in prop.fixed
        bits = prop.cell_bits(g)
        np.testing.assert_array_equal(bits, [-1, -1, 1, 1, -1, -1, -1, -1])
        pats = bf.feasible_cell_patterns(g, 2, fx)
        assert np.all(pats[:, 2:4] == 1)
        assert len(np.unique(pats[:, 4:], axis=0)) > 1

    def test_no_fixings(self):
        prop = propagate(FixingSet(), MaxSwitchings(1), TemporalGrid.uniform(4))
        assert prop.feasible and prop.fixed == ()

    def test_off_grid_fixing(self):
        with pytest.raises(MisalignmentError):
            propagate(FixingSet((0.3,), (1,)), MaxSwitchings(1), TemporalGrid.uniform(4))

    @settings(max_examples=150, deadline=None)
    @given(fixings_strategy(8), st.integers(1, 3), st.booleans())
    def test_fixed_region_agrees_with_enumeration(self, fx, sigma, count_initial):
        g = TemporalGrid.uniform(8)
        c = MaxSwitchings(sigma, count_initial)
        prop = propagate(fx, c, g)
        pats = bf.feasible_cell_patterns(g, sigma, fx, count_initial)
        assert prop.feasible == (pats.shape[0] > 0)
        if prop.feasible:
            bits = prop.cell_bits(g)
            fixed = bits >= 0
            assert np.all(pats[:, fixed] == bits[fixed])


class TestPropagateDwell:
    def test_sandwich_infeasible(self):
        fx = FixingSet.from_pairs([(0.25, 1), (0.5, 0), (0.75, 1)])
        assert not propagate(fx, MinDwell(0.6), TemporalGrid.uniform(4)).feasible

    def test_close_equal_bits_fixed(self):
        fx = FixingSet.from_pairs([(0.25, 1), (0.5, 1)])
        prop = propagate(fx, MinDwell(0.3), TemporalGrid.uniform(4))
        assert ((0.25, 0.5), 1) in prop.fixed

    @settings(max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow])
    @given(fixings_strategy(6, 3), st.sampled_from([0.2, 1 / 3, 0.4, 0.5]))
    def test_fixed_region_agrees_with_enumeration(self, fx, s):
        g = TemporalGrid.uniform(6)
        prop = propagate(fx, MinDwell(s), g)
        omega = shift_set(list(fx.taus) + list(g.nodes), s, 1.0)
        ctrls = list(bf.dwell_controls(omega, s, fx, 1.0, max_switches=4))
        assert prop.feasible == (len(ctrls) > 0)
        if prop.feasible:
            bits = prop.cell_bits(g)
            mids = 0.5 * (g.nodes[:-1] + g.nodes[1:])
            for times in ctrls:
                u = SwitchingControl(times)
                vals = np.array([u(t) for t in mids])
                assert np.all(vals[bits >= 0] == bits[bits >= 0])


class TestEmbedding:
    def test_identity_without_fixings(self):
        P = AveragingPartition.from_grid(TemporalGrid.uniform(3))
        np.testing.assert_array_equal(embed(np.array([0.1, 0.2, 0.3]), FixingSet(), P), [0.1, 0.2, 0.3])

    def test_insert_between(self):
        P = AveragingPartition.from_grid(TemporalGrid.uniform(2))
        np.testing.assert_array_equal(embed(np.array([0.3, 0.7]), FixingSet((0.5,), (1,)), P), [0.3, 1, 0.7])

    def test_fixing_inside_interval(self):
        P = AveragingPartition([(0.0, 1.0)])
        with pytest.raises(MisalignmentError):
            embed(np.array([0.5]), FixingSet((0.5,), (1,)), P)

    @given(fixings_strategy(6), st.lists(st.floats(-2, 2), min_size=6, max_size=6), st.floats(-3, 3))
    def test_round_trip(self, fx, a_red, b):
        P = AveragingPartition.from_grid(TemporalGrid.uniform(6))
        rng = np.random.default_rng(0)
        v = rng.random(6)
        x = embed(v, fx, P)
        a = embed(np.array(a_red), fx, P)
        a_fix = rng.standard_normal(len(fx))
        pos = extended_positions(fx, P)
        a[pos] = a_fix
        a2, b2 = delete(a, b, fx, P)
        np.testing.assert_allclose(a2, a_red)
        # the reduced inequality evaluates identically on embedded points
        assert a @ x - b == pytest.approx(a2 @ v - b2, abs=1e-12)
        mask = np.ones(x.size, bool)
        mask[pos] = False
        np.testing.assert_allclose(x[mask], v)


class TestMaxSwitchOracle:
    def test_examples(self):
        w, val = optimize_maxswitch(np.array([1.0, -1.0, 1.0]), 1, True)
        np.testing.assert_array_equal(w, [0, 0, 0])
        assert val == 0
        w, val = optimize_maxswitch(np.array([1.0, -1.0, 1.0]), 2, True)
        np.testing.assert_array_equal(w, [0, 1, 0])
        assert val == -1
        w, val = optimize_maxswitch(np.array([1.0, 0.0, 1.0]), 1, True, {1: 1})
        np.testing.assert_array_equal(w, [0, 1, 1])
        assert val == 1

    def test_infeasible(self):
        with pytest.raises(Infeasible):
            optimize_maxswitch(np.zeros(3), 1, True, {0: 1, 1: 0})

    def test_tie_break_prefers_zero(self):
        w, _ = optimize_maxswitch(np.zeros(4), 2, True)
        np.testing.assert_array_equal(w, [0, 0, 0, 0])

    @settings(max_examples=300, deadline=None)
    @given(
        st.integers(1, 9).flatmap(
            lambda n: st.tuples(
                st.lists(st.floats(-3, 3, allow_nan=False), min_size=n, max_size=n),
                st.dictionaries(st.integers(0, n - 1), st.integers(0, 1), max_size=3),
            )
        ),
        st.integers(1, 3),
        st.booleans(),
    )
    def test_matches_brute_force(self, data, sigma, count_initial):
        cost, fixed = data
        cost = np.array(cost)
        V = bf.maxswitch_vertices(cost.size, sigma, count_initial, fixed)
        if V.shape[0] == 0:
            with pytest.raises(Infeasible):
                optimize_maxswitch(cost, sigma, count_initial, fixed)
            return
        w, val = optimize_maxswitch(cost, sigma, count_initial, fixed)
        assert val == pytest.approx(float(np.min(V @ cost)), abs=1e-12)
        assert total_variation(w, count_initial) <= sigma
        assert all(w[p] == c for p, c in fixed.items())


class TestDwellOracle:
    halves = AveragingPartition([(0.0, 0.5), (0.5, 1.0)])

    def test_turn_on_immediately(self):
        res = optimize_dwell(np.array([-1.0, -1.0]), 0.6, FixingSet(), self.halves)
        assert res.value == -2
        np.testing.assert_allclose(res.projected, [1, 1])
        assert res.control.times == (0.0,)

    def test_closure_point(self):
        res = optimize_dwell(np.array([-1.0, -1.0]), 0.6, FixingSet((0.5,), (0,)), self.halves)
        assert res.value == pytest.approx(-1)
        np.testing.assert_allclose(res.projected, [0, 1])

    def test_fixing_one_at_zero_forces_switch(self):
        res = optimize_dwell(np.array([1.0, 1.0]), 0.6, FixingSet((0.0,), (1,)), self.halves)
        assert res.control.times[0] == 0.0
        best, _ = bf.dwell_optimum(np.array([1.0, 1.0]), 0.6, FixingSet((0.0,), (1,)), self.halves)
        assert res.value == pytest.approx(best)
        assert res.value == pytest.approx(1.2)

    def test_infeasible(self):
        fx = FixingSet.from_pairs([(0.25, 1), (0.5, 0), (0.75, 1)])
        with pytest.raises(Infeasible):
            optimize_dwell(np.zeros(2), 0.6, fx, self.halves)

    def test_plan_reuse(self):
        fx = FixingSet((0.25,), (1,))
        P = AveragingPartition.from_grid(TemporalGrid.uniform(4))
        plan = DwellPlan.build(0.3, fx, P)
        rng = np.random.default_rng(1)
        for _ in range(5):
            c = rng.standard_normal(4)
            assert optimize_dwell(c, 0.3, fx, P, plan=plan).value == optimize_dwell(c, 0.3, fx, P).value

    @settings(max_examples=80, deadline=None, suppress_health_check=[HealthCheck.too_slow])
    @given(
        st.lists(st.floats(-2, 2, allow_nan=False), min_size=3, max_size=3),
        fixings_strategy(3, 2),
        st.sampled_from([0.2, 0.3, 0.45, 0.7]),
    )
    def test_matches_brute_force(self, cost, fx, s):
        P = AveragingPartition.from_grid(TemporalGrid.uniform(3))
        cost = np.array(cost)
        best, _ = bf.dwell_optimum(cost, s, fx, P)
        if not np.isfinite(best):
            with pytest.raises(Infeasible):
                optimize_dwell(cost, s, fx, P)
            return
        res = optimize_dwell(cost, s, fx, P)
        assert res.value == pytest.approx(best, abs=1e-12)
        t = res.control.times
        assert all(b - a >= s - 1e-9 for a, b in zip(t, t[1:]))


def maxswitch_ctx(M, sigma, fx=FixingSet(), count_initial=True):
    P = AveragingPartition.from_grid(TemporalGrid.uniform(M))
    return SeparationContext(MaxSwitchings(sigma, count_initial), fx, P)


def assert_valid(cut: CuttingPlane, grid, sigma, fx, count_initial=True):
    pats = bf.feasible_cell_patterns(grid, sigma, fx, count_initial)
    lhs = pats @ cut.row(grid)
    assert np.all(lhs <= cut.b + 1e-9)


class TestSeparation:
    def test_monotone_cut(self):
        out = separate_with_info(np.array([0.6, 0.3]), maxswitch_ctx(2, 1))
        cut = out.cut
        assert cut is not None
        np.testing.assert_allclose(cut.a, [1, -1], atol=1e-6)
        assert cut.b == pytest.approx(0, abs=1e-6)
        assert cut.violation(np.array([0.6, 0.3])) == pytest.approx(0.3, abs=1e-6)

    def test_interior_point(self):
        assert separate(np.array([0.5, 0.5]), maxswitch_ctx(2, 1)) is None

    def test_total_variation_cut(self):
        v = np.array([1.0, 0.0, 1.0])
        out = separate_with_info(v, maxswitch_ctx(3, 2))
        assert out.stage == "tv"
        assert np.max(np.abs(out.cut.a)) == pytest.approx(1.0)
        assert out.cut.violation(v) > 0.1
        assert_valid(out.cut, TemporalGrid.uniform(3), 2, FixingSet())

    def test_hull_smaller_than_level_set(self):
        v = np.array([1.0, 0.5, 1.0])
        assert total_variation(v) <= 2
        out = separate_with_info(v, maxswitch_ctx(3, 2))
        assert out.stage == "fw" and out.cut is not None
        assert out.cut.violation(v) > 0
        assert_valid(out.cut, TemporalGrid.uniform(3), 2, FixingSet())

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.integers(1, 3), fixings_strategy(5, 2))
    def test_convex_combinations_accepted(self, seed, sigma, fx):
        g = TemporalGrid.uniform(5)
        pats = bf.feasible_cell_patterns(g, sigma, fx)
        if pats.shape[0] == 0:
            return
        rng = np.random.default_rng(seed)
        k = min(pats.shape[0], 6)
        idx = rng.choice(pats.shape[0], size=k, replace=False)
        lam = rng.dirichlet(np.ones(k))
        v = lam @ pats[idx]
        ctx = SeparationContext(MaxSwitchings(sigma), fx, AveragingPartition.from_grid(g), tol_sep=1e-6)
        cut = separate(v, ctx)
        # a cut may only be returned if the point is outside by more than tolerance
        assert cut is None or cut.violation(v) <= 1e-6

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.floats(0, 1), min_size=6, max_size=6), st.integers(1, 3), fixings_strategy(6, 2), st.booleans())
    def test_cuts_valid_with_fixings(self, v, sigma, fx, count_initial):
        g = TemporalGrid.uniform(6)
        if not propagate(fx, MaxSwitchings(sigma, count_initial), g).feasible:
            return
        ctx = SeparationContext(MaxSwitchings(sigma, count_initial), fx, AveragingPartition.from_grid(g))
        out = separate_with_info(np.array(v), ctx)
        if out.cut is not None:
            assert out.cut.violation(np.array(v)) > 0
            assert_valid(out.cut, g, sigma, fx, count_initial)

    @settings(max_examples=25, deadline=None, suppress_health_check=[HealthCheck.too_slow])
    @given(st.lists(st.floats(0, 1), min_size=4, max_size=4), st.sampled_from([0.25, 0.3, 0.5]))
    def test_dwell_cuts_valid(self, v, s):
        g = TemporalGrid.uniform(4)
        P = AveragingPartition.from_grid(g)
        ctx = SeparationContext(MinDwell(s), FixingSet(), P)
        out = separate_with_info(np.array(v), ctx)
        if out.cut is None:
            return
        omega = shift_set(list(P.starts) + list(P.ends), s, 1.0)
        for times in bf.dwell_controls(omega, s, FixingSet()):
            assert out.cut.a @ SwitchingControl(times).project(P) <= out.cut.b + 1e-9

    def test_cut_row_on_refined_grid(self):
        g = TemporalGrid.uniform(2)
        cut = CuttingPlane(AveragingPartition.from_grid(g), np.array([1.0, -1.0]), 0.0)
        fine = TemporalGrid.uniform(4)
        np.testing.assert_allclose(cut.row(fine), [0.5, 0.5, -0.5, -0.5])
        row, b = cut.unit_row(fine)
        assert np.sqrt(np.sum(row**2 / fine.lengths)) == pytest.approx(1.0)
        assert b == 0.0


class TestRounding:
    def test_example(self):
        v = PiecewiseConstantFn(TemporalGrid.uniform(3), [0.6, 0.4, 0.7])
        w = round_cia(v, MaxSwitchings(1))
        np.testing.assert_array_equal(w.values, [0, 0, 1])

    def test_binary_feasible_unchanged(self):
        v = PiecewiseConstantFn(TemporalGrid.uniform(4), [0, 1, 1, 0])
        np.testing.assert_array_equal(round_cia(v, MaxSwitchings(2)).values, v.values)

    def test_all_cells_fixed(self):
        g = TemporalGrid.uniform(4)
        fx = FixingSet.from_pairs([(0.0, 1), (0.25, 1), (0.5, 1)])
        assert np.all(propagate(fx, MaxSwitchings(1), g).cell_bits(g) == 1)
        v = PiecewiseConstantFn(g, [0.1, 0.2, 0.1, 0.3])
        w = round_cia(v, MaxSwitchings(1), fx)
        np.testing.assert_array_equal(w.values, [1, 1, 1, 1])

    def test_infeasible_fixings(self):
        g = TemporalGrid.uniform(4)
        with pytest.raises(Infeasible):
            round_cia(PiecewiseConstantFn.constant(g, 0.5), MaxSwitchings(1), FixingSet.from_pairs([(0.25, 1), (0.5, 0)]))

    @settings(max_examples=120, deadline=None)
    @given(st.lists(st.floats(0, 1), min_size=7, max_size=7), st.integers(1, 3), fixings_strategy(7, 3))
    def test_optimal_and_feasible(self, vals, sigma, fx):
        g = TemporalGrid.uniform(7)
        v = PiecewiseConstantFn(g, vals)
        pats = bf.feasible_cell_patterns(g, sigma, fx)
        if pats.shape[0] == 0:
            return
        w = round_cia(v, MaxSwitchings(sigma), fx)
        assert any(np.array_equal(w.values, p) for p in pats)
        best = np.min(np.abs(pats - np.array(vals)) @ g.lengths)
        assert np.abs(w.values - vals) @ g.lengths == pytest.approx(best, abs=1e-12)

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.floats(0, 1), min_size=6, max_size=6), st.sampled_from([0.2, 0.35, 0.5]))
    def test_dwell_rounding_feasible(self, vals, s):
        g = TemporalGrid.uniform(6)
        w = round_cia(PiecewiseConstantFn(g, vals), MinDwell(s))
        assert w.is_binary()
        jumps = w.grid.nodes[1:-1][np.diff(w.values) != 0]
        times = ([0.0] if w.values[0] == 1 else []) + list(jumps)
        assert all(b - a >= s - 1e-9 for a, b in zip(times, times[1:]))
