"""Built-in problems: exact values, derivative consistency, operator algebra."""

from __future__ import annotations

import numpy as np
import pytest

from mlbvp.autodiff import DerivativeBundle
from mlbvp.problems import (
    PROBLEM_LABELS,
    ProblemDef,
    convection_diffusion,
    helmholtz1d,
    interior_grid,
    make_problem,
    poisson1d,
    poisson2d,
    residual_at,
)

ALL_PROBLEMS = [
    poisson1d(2),
    poisson1d(10),
    convection_diffusion(1.0),
    convection_diffusion(0.01),
    convection_diffusion(1e-4),
    helmholtz1d(9200.0),
    poisson2d(),
]

IDS = [
    "poisson1d-k2",
    "poisson1d-k10",
    "convdiff-1",
    "convdiff-0.01",
    "convdiff-1e-4",
    "helmholtz",
    "poisson2d",
]


def eval_grid(problem: ProblemDef) -> np.ndarray:
    return interior_grid(problem.dim, 48 if problem.dim == 2 else 512)


class TestExactValues:
    def test_poisson1d_quarter_point(self):
        u = poisson1d(2).exact(np.array([[0.25]]))
        assert u[0] == pytest.approx(np.e - 1.234375, rel=1e-15)

    def test_convdiff_midpoint_thin_layer(self):
        u = convection_diffusion(0.01).exact(np.array([[0.5]]))
        expected = 0.5 - (np.exp(-50.0) - np.exp(-100.0)) / (1.0 - np.exp(-100.0))
        assert u[0] == pytest.approx(expected, rel=1e-15)

    def test_helmholtz_endpoints(self):
        problem = helmholtz1d(9200.0)
        u = problem.exact(np.array([[0.0], [1.0]]))
        assert u[0] == 0.0
        assert u[1] == 1.0
        assert problem.lift is not None
        assert np.allclose(problem.lift.value(np.array([[0.0], [1.0]])), [0.0, 1.0])

    def test_poisson2d_center_source(self):
        f = poisson2d().source(np.array([[0.5, 0.5]]))
        assert f[0] == pytest.approx(2.0 * np.pi**2, rel=1e-15)

    @pytest.mark.parametrize(
        "problem",
        [poisson1d(2), poisson1d(10), convection_diffusion(1.0), convection_diffusion(0.01)],
        ids=["poisson1d-k2", "poisson1d-k10", "convdiff-1", "convdiff-0.01"],
    )
    def test_homogeneous_boundary_values(self, problem):
        u = problem.exact(np.array([[0.0], [1.0]]))
        assert np.max(np.abs(u)) <= 1e-14

    def test_poisson2d_boundary_values(self):
        edge = np.array([[0.0, 0.4], [1.0, 0.7], [0.3, 0.0], [0.9, 1.0]])
        assert np.max(np.abs(poisson2d().exact(edge))) <= 1e-15


class TestDerivativeConsistency:
    @pytest.mark.parametrize("problem", ALL_PROBLEMS, ids=IDS)
    def test_grad_matches_value_differences(self, problem):
        pts = interior_grid(problem.dim, 9 if problem.dim == 2 else 60)
        grad = problem.exact_grad(pts)
        h = 1e-6
        for j in range(problem.dim):
            up, dn = pts.copy(), pts.copy()
            up[:, j] += h
            dn[:, j] -= h
            fd = (problem.exact(up) - problem.exact(dn)) / (2 * h)
            scale = max(1.0, float(np.max(np.abs(fd))))
            assert np.max(np.abs(grad[:, j] - fd)) <= 1e-6 * scale

    @pytest.mark.parametrize("problem", ALL_PROBLEMS, ids=IDS)
    def test_hessian_matches_grad_differences(self, problem):
        pts = interior_grid(problem.dim, 9 if problem.dim == 2 else 60)
        hess = problem.exact_diag_hess(pts)
        h = 1e-6
        for j in range(problem.dim):
            up, dn = pts.copy(), pts.copy()
            up[:, j] += h
            dn[:, j] -= h
            fd = (problem.exact_grad(up)[:, j] - problem.exact_grad(dn)[:, j]) / (2 * h)
            scale = max(1.0, float(np.max(np.abs(fd))))
            assert np.max(np.abs(hess[:, j] - fd)) <= 1e-6 * scale


class TestOperator:
    @pytest.mark.parametrize("problem", ALL_PROBLEMS, ids=IDS)
    def test_exact_solution_nulls_the_residual(self, problem):
        pts = eval_grid(problem)
        res = residual_at(problem, problem.source, 1.0, problem.exact_bundle(pts), pts)
        assert float(np.mean(res**2)) <= 1e-20

    def test_linearity_in_the_bundle(self, rng):
        problem = helmholtz1d(9200.0)
        pts = interior_grid(1, 16)

        def random_bundle():
            return DerivativeBundle(
                rng.standard_normal(16),
                rng.standard_normal((16, 1)),
                rng.standard_normal((16, 1)),
            )

        b1, b2 = random_bundle(), random_bundle()
        combo = DerivativeBundle(
            2.0 * b1.value - 3.0 * b2.value,
            2.0 * b1.grad - 3.0 * b2.grad,
            2.0 * b1.diag_hess - 3.0 * b2.diag_hess,
        )
        lhs = problem.operator(combo)
        rhs = 2.0 * problem.operator(b1) - 3.0 * problem.operator(b2)
        assert np.max(np.abs(lhs - rhs)) <= 1e-10

    def test_residual_of_zero_bundle_is_scaled_source(self):
        problem = convection_diffusion(1.0)
        pts = interior_grid(1, 8)
        zero = DerivativeBundle(np.zeros(8), np.zeros((8, 1)), np.zeros((8, 1)))
        res = residual_at(problem, np.ones(8), 1000.0, zero, pts)
        assert np.all(res == 1000.0)

    def test_coefficient_shape_validation(self):
        base = poisson1d(2)
        with pytest.raises(ValueError):
            ProblemDef(
                label="bad",
                dim=2,
                domain_length=1.0,
                value_coeff=0.0,
                grad_coeffs=np.array([0.0]),
                hess_coeffs=np.array([-1.0, -1.0]),
                source=base.source,
                exact=base.exact,
                exact_grad=base.exact_grad,
                exact_diag_hess=base.exact_diag_hess,
            )

    def test_exact_bundle_shapes(self):
        problem = poisson2d()
        b = problem.exact_bundle(interior_grid(2, 3))
        assert b.value.shape == (9,)
        assert b.grad.shape == (9, 2)
        assert b.diag_hess.shape == (9, 2)


class TestThinLayers:
    def test_no_overflow_in_sharp_layer(self):
        problem = convection_diffusion(1e-4)
        pts = interior_grid(1, 4096)
        with np.errstate(over="raise", invalid="raise"):
            u = problem.exact(pts)
            g = problem.exact_grad(pts)
            h = problem.exact_diag_hess(pts)
        assert np.all(np.isfinite(u)) and np.all(np.isfinite(g)) and np.all(np.isfinite(h))

    def test_layer_hugs_the_right_boundary(self):
        problem = convection_diffusion(0.01)
        pts = interior_grid(1, 1024)
        u = problem.exact(pts)
        # away from x = 1 the solution tracks x itself
        left = pts[:, 0] < 0.9
        assert np.max(np.abs(u[left] - pts[left, 0])) <= 1e-4


class TestHelmholtzGuards:
    def test_rejects_near_resonance(self):
        with pytest.raises(ValueError):
            helmholtz1d(np.pi**2)

    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            helmholtz1d(0.0)

    def test_operator_kills_exact_solution_bitwise(self):
        problem = helmholtz1d(9200.0)
        pts = interior_grid(1, 256)
        au = problem.operator(problem.exact_bundle(pts))
        assert np.all(au == 0.0)


class TestInteriorGrid:
    def test_midpoints_1d(self):
        assert np.allclose(interior_grid(1, 4)[:, 0], [0.125, 0.375, 0.625, 0.875])

    def test_custom_length(self):
        assert np.allclose(interior_grid(1, 2, length=2.0)[:, 0], [0.5, 1.5])

    def test_2d_shape_and_order(self):
        g = interior_grid(2, 4)
        assert g.shape == (16, 2)
        assert np.allclose(g[0], [0.125, 0.125])
        assert np.allclose(g[1], [0.125, 0.375])
        assert np.allclose(g[4], [0.375, 0.125])

    def test_excludes_boundary(self):
        g = interior_grid(2, 32)
        assert np.min(g) > 0.0 and np.max(g) < 1.0

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            interior_grid(1, 0)

    def test_sin_squared_mean_is_exact(self):
        # midpoint grids integrate sin^2(pi x) exactly: the mean is 1/2
        for n in (8, 64, 4096):
            x = interior_grid(1, n)[:, 0]
            assert float(np.mean(np.sin(np.pi * x) ** 2)) == pytest.approx(0.5, abs=2e-15)


class TestMakeProblem:
    @pytest.mark.parametrize("label", PROBLEM_LABELS)
    def test_round_trips_labels(self, label):
        assert make_problem(label).label == label

    def test_forwards_parameters(self):
        assert make_problem("poisson1d", k=10).params == {"k": 10}
        assert make_problem("convdiff", epsilon=0.01).params == {"epsilon": 0.01}
        assert make_problem("helmholtz1d", kappa_sq=500.0).params == {"kappa_sq": 500.0}

    def test_rejects_unknown_label(self):
        with pytest.raises(ValueError):
            make_problem("burgers")

    def test_rejects_foreign_parameters(self):
        with pytest.raises(ValueError):
            make_problem("poisson1d", epsilon=0.5)
        with pytest.raises(ValueError):
            make_problem("poisson2d", k=3)
