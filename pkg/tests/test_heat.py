import numpy as np
import pytest

from switchbnb.heat import (
    FemOperators,
    HeatProblem,
    SpaceGrid,
    SpaceTimeField,
    apply_psi_star,
    assemble_hessian,
    objective,
    solve_adjoint,
    solve_state,
)
from switchbnb.timegrid import PiecewiseConstantFn, TemporalGrid, refine


@pytest.fixture(scope="module")
def ops():
    return FemOperators.build(SpaceGrid(16))


def random_control(rng, grid):
    return PiecewiseConstantFn(grid, rng.random(grid.n_cells))


class TestOperators:
    def test_matrices(self, ops):
        M, A = ops.mass_dense(), ops.stiff_dense()
        assert np.allclose(M, M.T) and np.allclose(A, A.T)
        assert np.all(np.linalg.eigvalsh(M) > 0)
        assert np.all(np.linalg.eigvalsh(A) > -1e-12)
        for X in (M, A):
            assert np.allclose(np.triu(X, 2), 0) and np.allclose(np.tril(X, -2), 0)

    def test_band_products_match_dense(self, ops):
        v = np.random.default_rng(0).standard_normal((ops.n, 3))
        np.testing.assert_allclose(ops.mass(v.copy()), ops.mass_dense() @ v)
        np.testing.assert_allclose(ops.stiff(v.copy()), ops.stiff_dense() @ v)

    def test_load_vector_integrates_polynomials(self):
        # two Gauss points per element are exact for the product of a quadratic and a hat
        ops = FemOperators.build(SpaceGrid(8), lambda x: x**2)
        x = SpaceGrid(8).nodes[1:-1]
        h = 1 / 8
        exact = h * x**2 + h**3 / 6
        np.testing.assert_allclose(ops.psi, exact, rtol=1e-12)

    def test_initial_projection(self, ops):
        y0 = ops.project_initial(lambda x: np.sin(np.pi * x))
        x = ops.space.nodes[1:-1]
        assert np.max(np.abs(y0 - np.sin(np.pi * x))) < 1e-2


class TestStateSolve:
    def test_zero(self, ops):
        g = TemporalGrid.uniform(5)
        y = solve_state(PiecewiseConstantFn.constant(g, 0.0), None, ops)
        assert np.all(y.values == 0)

    def test_zero_form_function(self):
        ops0 = FemOperators.zero_source(SpaceGrid(8))
        g = TemporalGrid.uniform(4)
        y0 = np.linspace(0, 1, ops0.n)
        a = solve_state(PiecewiseConstantFn.constant(g, 0.0), y0, ops0)
        b = solve_state(PiecewiseConstantFn.constant(g, 1.0), y0, ops0)
        np.testing.assert_array_equal(a.values, b.values)

    def test_one_step_recursion(self, ops):
        g = TemporalGrid([0.0, 0.3, 1.0])
        u = PiecewiseConstantFn(g, [0.7, 0.2])
        y0 = np.random.default_rng(1).standard_normal(ops.n)
        y = solve_state(u, y0, ops)
        M, A = ops.mass_dense(), ops.stiff_dense()
        y1 = np.linalg.solve(M + 0.3 * A, M @ y0 + 0.3 * 0.7 * ops.psi)
        y2 = np.linalg.solve(M + 0.7 * A, M @ y1 + 0.7 * 0.2 * ops.psi)
        np.testing.assert_allclose(y.values, [y1, y2], rtol=1e-12, atol=1e-14)

    def test_energy_estimate(self, ops):
        rng = np.random.default_rng(2)
        g = TemporalGrid(np.sort(np.concatenate([[0, 1], rng.random(9)])))
        u = random_control(rng, g)
        y0 = rng.standard_normal(ops.n)
        y = solve_state(u, y0, ops)
        M = ops.mass_dense()
        nm = lambda v: np.sqrt(v @ M @ v)
        psi_norm = np.sqrt(ops.psi @ np.linalg.solve(M, ops.psi))
        prev = y0
        for l, s in enumerate(g.lengths):
            assert nm(y.values[l]) <= nm(prev) + s * np.max(np.abs(u.values)) * psi_norm + 1e-12
            prev = y.values[l]

    def test_mismatched_grid_in_objective(self, ops):
        g = TemporalGrid.uniform(3)
        y = solve_state(PiecewiseConstantFn.constant(g, 1.0), None, ops)
        with pytest.raises(ValueError):
            objective(y, PiecewiseConstantFn.constant(TemporalGrid.uniform(2), 1.0), y, 0.1, ops)


class TestAdjoint:
    def test_zero_rhs(self, ops):
        g = TemporalGrid.uniform(4)
        p = solve_adjoint(SpaceTimeField.zeros(g, ops.n), ops)
        assert np.all(p.values == 0)
        assert np.all(apply_psi_star(p, ops).values == 0)

    def test_zero_form_function(self):
        ops0 = FemOperators.zero_source(SpaceGrid(8))
        g = TemporalGrid.uniform(3)
        w = SpaceTimeField(g, np.ones((3, ops0.n)))
        assert np.all(apply_psi_star(solve_adjoint(w, ops0), ops0).values == 0)

    def test_adjoint_identity(self, ops):
        rng = np.random.default_rng(3)
        g = TemporalGrid(np.sort(np.concatenate([[0, 1], rng.random(11)])))
        for _ in range(10):
            u = PiecewiseConstantFn(g, rng.standard_normal(g.n_cells))
            w = SpaceTimeField(g, rng.standard_normal((g.n_cells, ops.n)))
            y = solve_state(u, None, ops)
            lhs = np.sum(g.lengths * np.einsum("li,li->l", y.values, ops.mass(w.values.T).T))
            rhs = u.inner(apply_psi_star(solve_adjoint(w, ops), ops))
            assert abs(lhs - rhs) <= 1e-12 * max(1.0, abs(lhs))

    def test_gradient_matches_difference_quotients(self, ops):
        rng = np.random.default_rng(4)
        g = TemporalGrid.uniform(8)
        y_d = SpaceTimeField(g, rng.standard_normal((8, ops.n)) * 0.1)
        pr = HeatProblem(ops, y_d, 0.01)
        u = random_control(rng, g)
        d = PiecewiseConstantFn(g, rng.standard_normal(8))
        p = pr.adjoint(pr.state(u))
        grad = apply_psi_star(p, ops).values + pr.alpha * (u.values - 0.5)
        slope = float(np.sum(g.lengths * grad * d.values))
        eps = 1e-6
        up = PiecewiseConstantFn(g, u.values + eps * d.values)
        um = PiecewiseConstantFn(g, u.values - eps * d.values)
        fd = (pr.objective(up) - pr.objective(um)) / (2 * eps)
        assert fd == pytest.approx(slope, rel=1e-6)


class TestObjective:
    def test_zero_at_target(self, ops):
        g = TemporalGrid.uniform(4)
        u = PiecewiseConstantFn.constant(g, 0.5)
        y = solve_state(u, None, ops)
        assert objective(y, u, y, 0.005, ops) == pytest.approx(0.0, abs=1e-15)

    def test_no_regularization(self, ops):
        g = TemporalGrid.uniform(4)
        u = PiecewiseConstantFn.constant(g, 1.0)
        y = solve_state(u, None, ops)
        zero = SpaceTimeField.zeros(g, ops.n)
        assert objective(y, u, zero, 0.0, ops) == pytest.approx(0.5 * y.norm2(ops))

    def test_tikhonov_only(self, ops):
        g = TemporalGrid.uniform(4)
        u = PiecewiseConstantFn.constant(g, 1.0)
        y = solve_state(u, None, ops)
        assert objective(y, u, y, 0.005, ops) == pytest.approx(6.25e-4, rel=1e-12)

    def test_desired_state_on_finer_grid(self, ops):
        rng = np.random.default_rng(5)
        fine = TemporalGrid.uniform(8)
        y_d = SpaceTimeField(fine, rng.standard_normal((8, ops.n)))
        g = TemporalGrid.uniform(2)
        u = PiecewiseConstantFn(g, [0.2, 0.9])
        y = solve_state(u, None, ops)
        direct = 0.5 * (y.on(fine) - y_d).norm2(ops)
        assert objective(y, u, y_d, 0.0, ops) == pytest.approx(direct, rel=1e-10)


class TestHessian:
    def test_matches_state_norm(self, ops):
        rng = np.random.default_rng(6)
        g = refine(TemporalGrid.uniform(6), {1, 4})
        H = assemble_hessian(g, ops)
        for _ in range(5):
            u = PiecewiseConstantFn(g, rng.standard_normal(g.n_cells))
            y = solve_state(u, None, ops)
            assert u.values @ H @ u.values == pytest.approx(y.norm2(ops), rel=1e-9)

    def test_matches_matvec(self, ops):
        g = TemporalGrid([0, 0.1, 0.35, 0.5, 1.0])
        pr = HeatProblem(ops, SpaceTimeField.zeros(g, ops.n))
        H = pr.hessian(g)
        u = np.array([0.3, -1.0, 2.0, 0.5])
        np.testing.assert_allclose(H @ u, pr.hessian_matvec(g, u), rtol=1e-9, atol=1e-14)
        assert pr.hessian(g) is H
