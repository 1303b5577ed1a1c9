"""Extended forward pass and exact loss gradients, checked against oracles."""

from __future__ import annotations

import numpy as np
import pytest

import mlbvp.autodiff as ad
from mlbvp.autodiff import (
    extended_forward,
    finite_diff_gradient,
    loss_and_gradient,
)
from mlbvp.model import (
    FOURIER_G,
    FOURIER_SINE,
    PLAIN_G,
    AffineLift,
    NetworkSpec,
    ParamVector,
    pack_params,
    trial_value,
    unpack_params,
    xavier_init,
)
from mlbvp.problems import (
    convection_diffusion,
    helmholtz1d,
    interior_grid,
    poisson1d,
    poisson2d,
    residual_at,
)


def tanh_network() -> tuple[NetworkSpec, ParamVector]:
    """One hidden unit wired so the trial is exactly tanh(x)."""
    spec = NetworkSpec(1, (1,), architecture=PLAIN_G, unit_boundary_factor=True)
    layers = [
        (np.array([[1.0]]), np.array([0.0])),
        (np.array([[1.0]]), np.array([0.0])),
    ]
    return spec, pack_params(spec, layers)


def relative_deviation(analytic: np.ndarray, reference: np.ndarray) -> float:
    scale = max(1.0, float(np.max(np.abs(reference))))
    return float(np.max(np.abs(analytic - reference))) / scale


GATE_PROBLEMS = [poisson1d(2), convection_diffusion(1.0), helmholtz1d(9200.0), poisson2d()]


def gate_spec(architecture: str, dim: int) -> NetworkSpec:
    m = 0 if architecture == PLAIN_G else 2
    return NetworkSpec(dim, (6,), num_wavenumbers=m, architecture=architecture)


class TestExtendedForward:
    def test_hand_tanh_values(self):
        spec, params = tanh_network()
        x = np.array([0.0, 0.5])
        b = extended_forward(spec, params, x)
        t = np.tanh(x)
        s = 1.0 - t * t
        assert np.allclose(b.value, t, atol=1e-15)
        assert np.allclose(b.grad[:, 0], s, atol=1e-15)
        assert np.allclose(b.diag_hess[:, 0], -2.0 * t * s, atol=1e-15)

    def test_affine_network_has_zero_second_derivative(self):
        spec = NetworkSpec(
            1, (3,), architecture=PLAIN_G, activation="identity", unit_boundary_factor=True
        )
        w1 = np.array([[2.0], [-1.0], [0.5]])
        b1 = np.array([0.1, 0.2, 0.3])
        w2 = np.array([[1.0, 1.0, 2.0]])
        b2 = np.array([0.4])
        params = pack_params(spec, [(w1, b1), (w2, b2)])
        b = extended_forward(spec, params, np.array([0.2, 0.8]))
        slope = float((w2 @ w1)[0, 0])
        assert np.allclose(b.grad, slope, atol=1e-14)
        assert np.max(np.abs(b.diag_hess)) <= 1e-14

    @pytest.mark.parametrize("architecture", [PLAIN_G, FOURIER_G, FOURIER_SINE])
    @pytest.mark.parametrize("dim", [1, 2])
    def test_matches_finite_differences_in_space(self, architecture, dim, rng):
        spec = gate_spec(architecture, dim)
        params = xavier_init(spec, 3)
        pts = rng.uniform(0.1, 0.9, size=(15, dim))
        b = extended_forward(spec, params, pts)
        assert np.allclose(b.value, trial_value(spec, params, pts), atol=1e-14)
        h = 1e-5
        for j in range(dim):
            up, dn = pts.copy(), pts.copy()
            up[:, j] += h
            dn[:, j] -= h
            fd_grad = (trial_value(spec, params, up) - trial_value(spec, params, dn)) / (2 * h)
            assert np.allclose(b.grad[:, j], fd_grad, rtol=1e-6, atol=1e-8)
        h = 1e-4
        for j in range(dim):
            up, dn = pts.copy(), pts.copy()
            up[:, j] += h
            dn[:, j] -= h
            fd_hess = (
                trial_value(spec, params, up)
                - 2 * trial_value(spec, params, pts)
                + trial_value(spec, params, dn)
            ) / h**2
            assert np.allclose(b.diag_hess[:, j], fd_hess, rtol=1e-5, atol=1e-5)

    def test_lift_shifts_value_and_gradient_only(self, rng):
        spec = gate_spec(FOURIER_G, 1)
        params = xavier_init(spec, 9)
        pts = rng.uniform(0, 1, size=(10, 1))
        bare = extended_forward(spec, params, pts)
        lift = AffineLift(0.25, np.array([2.0]))
        lifted = extended_forward(spec, params, pts, lift=lift)
        assert np.allclose(lifted.value, bare.value + 0.25 + 2.0 * pts[:, 0])
        assert np.allclose(lifted.grad, bare.grad + 2.0)
        assert np.array_equal(lifted.diag_hess, bare.diag_hess)


class TestLossGradient:
    @pytest.mark.parametrize("problem", GATE_PROBLEMS, ids=lambda p: p.label)
    @pytest.mark.parametrize("architecture", [PLAIN_G, FOURIER_G, FOURIER_SINE])
    def test_gradient_matches_finite_differences(self, problem, architecture):
        spec = gate_spec(architecture, problem.dim)
        pts = interior_grid(problem.dim, 7 if problem.dim == 2 else 40)
        for seed in (0, 1):
            params = xavier_init(spec, seed)
            report = loss_and_gradient(
                problem, problem.source, 1.0, spec, params, pts, lift=problem.lift
            )

            def closure(theta: ParamVector) -> float:
                return loss_and_gradient(
                    problem, problem.source, 1.0, spec, theta, pts, lift=problem.lift
                ).loss

            fd = finite_diff_gradient(closure, params, step=1e-6)
            assert relative_deviation(report.gradient, fd) <= 1e-6

    def test_corrupted_second_derivative_trips_the_gate(self, monkeypatch):
        problem = poisson1d(2)
        spec = gate_spec(FOURIER_G, 1)
        params = xavier_init(spec, 0)
        pts = interior_grid(1, 40)

        def closure(theta: ParamVector) -> float:
            return loss_and_gradient(problem, problem.source, 1.0, spec, theta, pts).loss

        monkeypatch.setattr(ad, "TANH_DD_SIGN", -1.0)
        report = loss_and_gradient(problem, problem.source, 1.0, spec, params, pts)
        fd = finite_diff_gradient(closure, params, step=1e-6)
        assert relative_deviation(report.gradient, fd) > 1e-3

    def test_zero_network_and_zero_source_give_zero(self):
        problem = poisson1d(2)
        spec = gate_spec(FOURIER_SINE, 1)
        layers = unpack_params(spec, xavier_init(spec, 4))
        layers[-1][0][:] = 0.0
        params = pack_params(spec, layers)
        pts = interior_grid(1, 50)
        report = loss_and_gradient(problem, np.zeros(50), 1.0, spec, params, pts)
        assert report.loss == 0.0
        assert np.all(report.gradient == 0.0)
        assert np.all(report.residuals == 0.0)

    def test_loss_quadratic_in_scale_at_zero_network(self):
        problem = poisson1d(2)
        spec = gate_spec(FOURIER_SINE, 1)
        layers = unpack_params(spec, xavier_init(spec, 4))
        layers[-1][0][:] = 0.0
        params = pack_params(spec, layers)
        pts = interior_grid(1, 64)
        one = loss_and_gradient(problem, problem.source, 1.0, spec, params, pts).loss
        two = loss_and_gradient(problem, problem.source, 2.0, spec, params, pts).loss
        assert two == pytest.approx(4.0 * one, rel=1e-14)
        svals = problem.source(pts)
        assert one == pytest.approx(float(np.mean(svals**2)), rel=1e-14)

    def test_residual_linear_in_output_layer(self):
        problem = convection_diffusion(1.0)
        spec = gate_spec(FOURIER_G, 1)
        params = xavier_init(spec, 6)
        pts = interior_grid(1, 30)
        svals = problem.source(pts)
        base = loss_and_gradient(problem, svals, 1.0, spec, params, pts).residuals
        layers = unpack_params(spec, params.copy())
        layers[-1][0][:] *= 3.0
        layers[-1][1][:] *= 3.0
        tripled = pack_params(spec, layers)
        scaled = loss_and_gradient(problem, svals, 1.0, spec, tripled, pts).residuals
        assert np.allclose(scaled - svals, 3.0 * (base - svals), rtol=1e-12, atol=1e-12)

    @pytest.mark.parametrize("problem", GATE_PROBLEMS, ids=lambda p: p.label)
    def test_loss_agrees_with_pointwise_residual_route(self, problem):
        spec = gate_spec(FOURIER_SINE, problem.dim)
        params = xavier_init(spec, 12)
        pts = interior_grid(problem.dim, 6 if problem.dim == 2 else 33)
        report = loss_and_gradient(
            problem, problem.source, 5.0, spec, params, pts, lift=problem.lift
        )
        bundle = extended_forward(spec, params, pts, lift=problem.lift)
        res = residual_at(problem, problem.source, 5.0, bundle, pts)
        assert np.allclose(report.residuals, res, rtol=1e-13, atol=1e-13)
        assert report.loss == pytest.approx(float(np.mean(res**2)), rel=1e-13)

    def test_rejects_empty_collocation(self):
        problem = poisson1d(2)
        spec = gate_spec(PLAIN_G, 1)
        with pytest.raises(ValueError):
            loss_and_gradient(
                problem, problem.source, 1.0, spec, xavier_init(spec, 0), np.zeros((0, 1))
            )

    def test_rejects_mismatched_source_values(self):
        problem = poisson1d(2)
        spec = gate_spec(PLAIN_G, 1)
        with pytest.raises(ValueError):
            loss_and_gradient(
                problem, np.zeros(7), 1.0, spec, xavier_init(spec, 0), interior_grid(1, 8)
            )


class TestFiniteDiffGradient:
    def test_quadratic(self):
        grad = finite_diff_gradient(
            lambda p: float(p.values @ p.values), ParamVector(np.array([1.0, 2.0]))
        )
        assert np.allclose(grad, [2.0, 4.0], atol=1e-8)

    def test_constant(self):
        grad = finite_diff_gradient(lambda p: 3.5, ParamVector(np.array([0.1, -0.2, 0.3])))
        assert np.all(grad == 0.0)

    def test_sine(self):
        grad = finite_diff_gradient(
            lambda p: float(np.sin(p.values[0])), ParamVector(np.array([0.3]))
        )
        assert grad[0] == pytest.approx(np.cos(0.3), abs=1e-9)
