"""Residual amplitude estimation with an extreme learning machine.

Before training a correction level, the size of the function it must
represent is estimated cheaply: a single frozen random tanh layer over
Fourier features, multiplied by the boundary factor, is fitted to the
unnormalized residual equation by linear least squares. The reciprocal of
the fitted amplitude becomes the level's scale factor mu, clipped to
[1, 1e14]. Only the order of magnitude matters; the fit itself is discarded.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import affine_state, boundary_terms, input_state, tanh_state
from .model import FOURIER_G, NetworkSpec, as_points
from .problems import ProblemDef, interior_grid

MU_MIN = 1.0
MU_MAX = 1e14


@dataclass(frozen=True)
class ElmBasis:
    """Frozen random hidden layer; columns of the design are A[g * tanh_h]."""

    spec: NetworkSpec
    weights: np.ndarray  # (width, input_width)
    biases: np.ndarray  # (width,)

    @property
    def width(self) -> int:
        return self.weights.shape[0]


@dataclass(frozen=True)
class ScaleEstimate:
    """Outcome of one amplitude estimation."""

    mu: float
    amplitude: float
    condition: float
    converged: bool  # residual already indistinguishable from zero


def make_elm_basis(
    dim: int,
    domain_length: float = 1.0,
    num_wavenumbers: int = 1,
    width: int = 50,
    seed: int = 0,
) -> ElmBasis:
    """Draw the frozen layer: Xavier-uniform weights, U(-1,1) biases."""
    spec = NetworkSpec(
        input_dim=dim,
        hidden_widths=(width,),
        num_wavenumbers=max(num_wavenumbers, 1),
        domain_length=domain_length,
        architecture=FOURIER_G,
    )
    rng = np.random.default_rng(seed)
    bound = np.sqrt(6.0 / (spec.input_width + width))
    weights = rng.uniform(-bound, bound, size=(width, spec.input_width))
    biases = rng.uniform(-1.0, 1.0, size=width)
    return ElmBasis(spec=spec, weights=weights, biases=biases)


def basis_bundles(basis: ElmBasis, points: np.ndarray):
    """Value, gradient, and diagonal Hessian of every basis function.

    Returns (u, du, d2u) with shapes (P, H), (d, P, H), (d, P, H); column h
    belongs to phi_h(x) = g(x) * tanh(w_h . features(x) + b_h).
    """
    x = as_points(points, basis.spec.input_dim)
    state = affine_state(basis.weights, basis.biases, input_state(basis.spec, x))
    (z, dz, ez), _ = tanh_state(state)
    f, fj, fjj = boundary_terms(basis.spec, x)
    u = f[:, None] * z
    du = fj[:, :, None] * z[None] + f[None, :, None] * dz
    d2u = fjj[:, :, None] * z[None] + 2.0 * fj[:, :, None] * dz + f[None, :, None] * ez
    return u, du, d2u


def design_matrix(problem: ProblemDef, basis: ElmBasis, points: np.ndarray) -> np.ndarray:
    """Operator applied to each basis function at each collocation point."""
    u, du, d2u = basis_bundles(basis, points)
    design = problem.value_coeff * u
    for j in range(problem.dim):
        design = design + problem.grad_coeffs[j] * du[j] + problem.hess_coeffs[j] * d2u[j]
    return design


def solve_least_squares(design: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Minimum-norm least squares via SVD, singular values below 1e-12 of the
    largest truncated."""
    coeffs, _ = _lstsq(design, rhs)
    return coeffs


def _lstsq(design: np.ndarray, rhs: np.ndarray):
    design = np.asarray(design, dtype=np.float64)
    rhs = np.asarray(rhs, dtype=np.float64)
    if design.ndim != 2:
        raise ValueError("design must be a matrix")
    if rhs.shape != (design.shape[0],):
        raise ValueError(f"rhs shape {rhs.shape} does not match design rows {design.shape[0]}")
    if design.shape[0] < design.shape[1]:
        raise ValueError("underdetermined system: fewer collocation points than basis functions")
    if not np.any(design):
        raise ValueError("design matrix is identically zero")
    coeffs, _, _, singular_values = np.linalg.lstsq(design, rhs, rcond=1e-12)
    return coeffs, singular_values


def elm_estimate_scale(
    problem: ProblemDef,
    source,
    basis: ElmBasis,
    collocation: np.ndarray,
    amplitude_points: np.ndarray | None = None,
) -> ScaleEstimate:
    """Fit the residual equation in the frozen basis and invert its amplitude.

    ``source`` is the unnormalized residual right-hand side, as a callable or
    as values on the collocation set. The amplitude is the max-abs of the
    fitted surrogate on a fixed midpoint grid (2048 points in 1-d, 64 per
    axis in 2-d, unless ``amplitude_points`` overrides it).
    """
    x = as_points(collocation, problem.dim)
    rhs = source(x) if callable(source) else np.asarray(source, dtype=np.float64)
    if rhs.shape != (x.shape[0],):
        raise ValueError(f"source values have shape {rhs.shape}, expected ({x.shape[0]},)")
    design = design_matrix(problem, basis, x)
    coeffs, singular_values = _lstsq(design, rhs)
    smin = singular_values.min() if singular_values.size else 0.0
    condition = float(singular_values.max() / smin) if smin > 0.0 else float("inf")
    if amplitude_points is None:
        n = 2048 if problem.dim == 1 else 64
        amplitude_points = interior_grid(problem.dim, n, problem.domain_length)
    surrogate, _, _ = basis_bundles(basis, amplitude_points)
    amplitude = float(np.max(np.abs(surrogate @ coeffs)))
    if amplitude == 0.0:
        return ScaleEstimate(mu=MU_MAX, amplitude=0.0, condition=condition, converged=True)
    mu = float(np.clip(1.0 / amplitude, MU_MIN, MU_MAX))
    return ScaleEstimate(mu=mu, amplitude=amplitude, condition=condition, converged=False)
