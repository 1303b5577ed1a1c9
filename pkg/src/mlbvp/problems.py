"""Built-in linear boundary-value problems with closed-form solutions.

Each problem is a linear operator A acting pointwise on a derivative bundle,

    A[u](x) = value_coeff * u(x) + sum_j grad_coeffs[j] * du/dx_j
              + sum_j hess_coeffs[j] * d2u/dx_j2,

together with a source f, the exact solution and its derivatives (for error
metrics), and optionally an affine lift carrying inhomogeneous boundary data.
All domains are the unit interval or unit square.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .autodiff import DerivativeBundle
from .model import AffineLift, as_points


@dataclass(frozen=True)
class ProblemDef:
    """A linear BVP: operator coefficients, source, and exact solution."""

    label: str
    dim: int
    domain_length: float
    value_coeff: float
    grad_coeffs: np.ndarray
    hess_coeffs: np.ndarray
    source: Callable[[np.ndarray], np.ndarray]
    exact: Callable[[np.ndarray], np.ndarray]
    exact_grad: Callable[[np.ndarray], np.ndarray]
    exact_diag_hess: Callable[[np.ndarray], np.ndarray]
    lift: AffineLift | None = None
    params: dict | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "grad_coeffs", np.asarray(self.grad_coeffs, dtype=np.float64))
        object.__setattr__(self, "hess_coeffs", np.asarray(self.hess_coeffs, dtype=np.float64))
        if self.grad_coeffs.shape != (self.dim,) or self.hess_coeffs.shape != (self.dim,):
            raise ValueError("operator coefficient arrays must have one entry per axis")

    def operator(self, bundle: DerivativeBundle) -> np.ndarray:
        """Apply A pointwise to a derivative bundle."""
        return (
            self.value_coeff * bundle.value
            + bundle.grad @ self.grad_coeffs
            + bundle.diag_hess @ self.hess_coeffs
        )

    def exact_bundle(self, points: np.ndarray) -> DerivativeBundle:
        x = as_points(points, self.dim)
        return DerivativeBundle(self.exact(x), self.exact_grad(x), self.exact_diag_hess(x))


def residual_at(problem: ProblemDef, source, mu: float, bundle: DerivativeBundle, points) -> np.ndarray:
    """Pointwise residual mu * source - A[bundle] at the given points."""
    x = as_points(points, problem.dim)
    svals = source(x) if callable(source) else np.asarray(source, dtype=np.float64)
    return mu * svals - problem.operator(bundle)


def interior_grid(dim: int, n_per_axis: int, length: float = 1.0) -> np.ndarray:
    """Deterministic midpoint grid, (n_per_axis**dim, dim), boundary excluded."""
    if n_per_axis < 1:
        raise ValueError("need at least one grid point per axis")
    axis = (np.arange(n_per_axis) + 0.5) * (length / n_per_axis)
    if dim == 1:
        return axis.reshape(-1, 1)
    grids = np.meshgrid(*([axis] * dim), indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=1)


def poisson1d(k: int = 2) -> ProblemDef:
    """-u'' = f on (0,1), u(0) = u(1) = 0, u(x) = exp(sin(k pi x)) + x^3 - x - 1."""
    if k < 1 or k != int(k):
        raise ValueError("k must be a positive integer")
    kp = k * np.pi

    def exact(x):
        t = x[:, 0]
        return np.exp(np.sin(kp * t)) + t**3 - t - 1.0

    def exact_grad(x):
        t = x[:, 0]
        g = kp * np.cos(kp * t) * np.exp(np.sin(kp * t)) + 3.0 * t**2 - 1.0
        return g[:, None]

    def exact_diag_hess(x):
        t = x[:, 0]
        h = kp**2 * (np.cos(kp * t) ** 2 - np.sin(kp * t)) * np.exp(np.sin(kp * t)) + 6.0 * t
        return h[:, None]

    def source(x):
        return -exact_diag_hess(x)[:, 0]

    return ProblemDef(
        label="poisson1d",
        dim=1,
        domain_length=1.0,
        value_coeff=0.0,
        grad_coeffs=np.array([0.0]),
        hess_coeffs=np.array([-1.0]),
        source=source,
        exact=exact,
        exact_grad=exact_grad,
        exact_diag_hess=exact_diag_hess,
        params={"k": k},
    )


def convection_diffusion(epsilon: float = 1.0) -> ProblemDef:
    """-eps u'' + u' = 1 on (0,1), u(0) = u(1) = 0, boundary layer at x = 1.

    The exact solution is written with non-positive exponents only, so it
    never overflows however thin the layer gets.
    """
    if epsilon <= 0.0:
        raise ValueError("epsilon must be positive")
    eps = float(epsilon)

    def _layer(x):
        t = x[:, 0]
        # (exp((x-1)/eps) - exp(-1/eps)) / (1 - exp(-1/eps)); both exponents <= 0
        e1 = np.exp((t - 1.0) / eps)
        e0 = np.exp(-1.0 / eps)
        return e1, e0

    def exact(x):
        e1, e0 = _layer(x)
        return x[:, 0] - (e1 - e0) / (1.0 - e0)

    def exact_grad(x):
        e1, e0 = _layer(x)
        return (1.0 - e1 / (eps * (1.0 - e0)))[:, None]

    def exact_diag_hess(x):
        e1, e0 = _layer(x)
        return (-e1 / (eps**2 * (1.0 - e0)))[:, None]

    def source(x):
        return np.ones(x.shape[0])

    return ProblemDef(
        label="convdiff",
        dim=1,
        domain_length=1.0,
        value_coeff=0.0,
        grad_coeffs=np.array([1.0]),
        hess_coeffs=np.array([-eps]),
        source=source,
        exact=exact,
        exact_grad=exact_grad,
        exact_diag_hess=exact_diag_hess,
        params={"epsilon": eps},
    )


def helmholtz1d(kappa_sq: float = 9200.0) -> ProblemDef:
    """-u'' - kappa^2 u = 0 on (0,1), u(0) = 0, u(1) = 1, u(x) = sin(kappa x)/sin(kappa).

    The inhomogeneous right boundary is carried by the affine lift x; kappa
    values too close to a resonance (|sin kappa| < 1e-6) are rejected.
    """
    if kappa_sq <= 0.0:
        raise ValueError("kappa_sq must be positive")
    kappa = float(np.sqrt(kappa_sq))
    sk = np.sin(kappa)
    if abs(sk) < 1e-6:
        raise ValueError(f"kappa = {kappa!r} is near-resonant (|sin kappa| < 1e-6)")

    def exact(x):
        return np.sin(kappa * x[:, 0]) / sk

    def exact_grad(x):
        return (kappa * np.cos(kappa * x[:, 0]) / sk)[:, None]

    def exact_diag_hess(x):
        # -kappa_sq times exact(x) itself (not kappa**2, not a fresh sin/sk):
        # sharing both roundings makes the operator annihilate the exact
        # bundle identically in floats
        return (-kappa_sq * exact(x))[:, None]

    def source(x):
        return np.zeros(x.shape[0])

    return ProblemDef(
        label="helmholtz1d",
        dim=1,
        domain_length=1.0,
        value_coeff=-kappa_sq,
        grad_coeffs=np.array([0.0]),
        hess_coeffs=np.array([-1.0]),
        source=source,
        exact=exact,
        exact_grad=exact_grad,
        exact_diag_hess=exact_diag_hess,
        lift=AffineLift(0.0, np.array([1.0])),
        params={"kappa_sq": float(kappa_sq)},
    )


def poisson2d() -> ProblemDef:
    """-Laplace(u) = f on the unit square, u = sin(pi x) sin(pi y) on it."""

    def exact(x):
        return np.sin(np.pi * x[:, 0]) * np.sin(np.pi * x[:, 1])

    def exact_grad(x):
        sx, sy = np.sin(np.pi * x[:, 0]), np.sin(np.pi * x[:, 1])
        cx, cy = np.cos(np.pi * x[:, 0]), np.cos(np.pi * x[:, 1])
        return np.stack([np.pi * cx * sy, np.pi * sx * cy], axis=1)

    def exact_diag_hess(x):
        v = exact(x)
        h = -(np.pi**2) * v
        return np.stack([h, h], axis=1)

    def source(x):
        return 2.0 * np.pi**2 * exact(x)

    return ProblemDef(
        label="poisson2d",
        dim=2,
        domain_length=1.0,
        value_coeff=0.0,
        grad_coeffs=np.array([0.0, 0.0]),
        hess_coeffs=np.array([-1.0, -1.0]),
        source=source,
        exact=exact,
        exact_grad=exact_grad,
        exact_diag_hess=exact_diag_hess,
    )


PROBLEM_LABELS = ("poisson1d", "convdiff", "helmholtz1d", "poisson2d")


_PROBLEM_PARAMS = {
    "poisson1d": {"k"},
    "convdiff": {"epsilon"},
    "helmholtz1d": {"kappa_sq"},
    "poisson2d": set(),
}


def make_problem(label: str, **params) -> ProblemDef:
    """Build a problem from its config label and parameter dict."""
    if label not in _PROBLEM_PARAMS:
        raise ValueError(f"unknown problem label {label!r} (choose from {PROBLEM_LABELS})")
    extra = set(params) - _PROBLEM_PARAMS[label]
    if extra:
        raise ValueError(f"{label} does not take parameters {sorted(extra)}")
    if label == "poisson1d":
        return poisson1d(int(params.get("k", 2)))
    if label == "convdiff":
        return convection_diffusion(float(params.get("epsilon", 1.0)))
    if label == "helmholtz1d":
        return helmholtz1d(float(params.get("kappa_sq", 9200.0)))
    return poisson2d()
