"""Extended forward propagation and exact loss gradients.

The collocation loss needs the trial value together with its spatial gradient
and diagonal second derivatives at every point. Instead of nesting an autograd
engine, each layer propagates the triple (z, dz/dx_j, d2z/dx_j2) forward in
closed form, and the parameter gradient of the loss is accumulated in reverse
through that same propagation. Everything is float64 and the summation order
is fixed, so results are bit-reproducible for a given thread count.

A "state" is a tuple (Z, D, E) with Z of shape (P, N) holding layer values,
and D, E of shape (d, P, N) holding first and second derivatives with respect
to each coordinate axis.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import (
    FOURIER_SINE,
    PLAIN_G,
    AffineLift,
    NetworkSpec,
    ParamVector,
    as_points,
    boundary_factor,
    fourier_features,
    unpack_params,
)

# Test hook: flipping this to -1.0 corrupts the second-derivative factor used
# in the forward pass while the reverse pass keeps the true tanh'' formula,
# so gradient checks must fail. Never change it in production code.
TANH_DD_SIGN = 1.0


@dataclass
class DerivativeBundle:
    """Pointwise value, gradient, and diagonal Hessian of a scalar field."""

    value: np.ndarray  # (P,)
    grad: np.ndarray  # (P, d)
    diag_hess: np.ndarray  # (P, d)


@dataclass
class LossReport:
    """Collocation loss with its exact parameter gradient."""

    loss: float
    gradient: np.ndarray  # flat, same layout as ParamVector
    residuals: np.ndarray  # (P,), mu * source - A[trial] at the collocation points


def input_state(spec: NetworkSpec, x: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Feature-layer state for raw coordinates or Fourier features.

    For Fourier inputs the block for axis j holds cos/sin of w_m x_j, so only
    that axis' derivative slots are non-zero there.
    """
    npts, dim = x.shape
    if spec.architecture == PLAIN_G:
        z = x
        d = np.zeros((dim, npts, dim))
        for j in range(dim):
            d[j, :, j] = 1.0
        e = np.zeros((dim, npts, dim))
        return z, d, e
    omegas = spec.fourier_map().omegas
    m = omegas.shape[0]
    width = 2 * m * dim
    z = np.empty((npts, width))
    d = np.zeros((dim, npts, width))
    e = np.zeros((dim, npts, width))
    for j in range(dim):
        ang = np.outer(x[:, j], omegas)
        c, s = np.cos(ang), np.sin(ang)
        lo, hi = 2 * m * j, 2 * m * (j + 1)
        z[:, lo : lo + m] = c
        z[:, lo + m : hi] = s
        d[j, :, lo : lo + m] = -s * omegas
        d[j, :, lo + m : hi] = c * omegas
        e[j, :, lo : lo + m] = -c * omegas**2
        e[j, :, lo + m : hi] = -s * omegas**2
    return z, d, e


def affine_state(w: np.ndarray, b: np.ndarray, state):
    """Push a state through an affine layer; derivatives are linear too."""
    z, d, e = state
    dim, npts, nin = d.shape
    a = z @ w.T + b
    de = np.concatenate([d, e], axis=0).reshape(2 * dim * npts, nin) @ w.T
    de = de.reshape(2 * dim, npts, w.shape[0])
    return a, de[:dim], de[dim:]


def tanh_state(state):
    """Apply tanh elementwise, with the chain rule for first and second order.

    Returns the new state and a cache consumed by the reverse pass.
    """
    a, da, ea = state
    t = np.tanh(a)
    s = 1.0 - t * t
    q = -2.0 * t * s * TANH_DD_SIGN
    z = t
    d = s[None] * da
    e = s[None] * ea + q[None] * da * da
    return (z, d, e), (t, s, q, da, ea)


def boundary_terms(spec: NetworkSpec, x: np.ndarray):
    """Boundary factor with first and second derivatives.

    Scalar-factor architectures return arrays of shape (P,), (d, P), (d, P);
    fourier-sine returns (P, M), (d, P, M), (d, P, M) for the per-mode sine
    products. The prefix/suffix trick avoids dividing by factors that vanish
    on the boundary itself.
    """
    npts, dim = x.shape
    if spec.architecture == FOURIER_SINE:
        m = spec.num_wavenumbers
        if spec.unit_boundary_factor:
            return np.ones((npts, m)), np.zeros((dim, npts, m)), np.zeros((dim, npts, m))
        omegas = spec.fourier_map().omegas
        ang = x[:, :, None] * omegas[None, None, :]
        sines = np.sin(ang).transpose(1, 0, 2)  # (d, P, M)
        coss = np.cos(ang).transpose(1, 0, 2)
        others = _product_excluding(sines)
        f = sines[0] * others[0]
        fj = omegas[None, None, :] * coss * others
        # d2 s_m / dx_j2 = -w_m^2 s_m for every axis j
        fjj = np.tile(-(omegas**2) * f, (dim, 1, 1))
        return f, fj, fjj
    if spec.unit_boundary_factor:
        return np.ones(npts), np.zeros((dim, npts)), np.zeros((dim, npts))
    t = (x * (spec.domain_length - x)).T  # (d, P)
    tp = (spec.domain_length - 2.0 * x).T
    others = _product_excluding(t)
    f = t[0] * others[0]
    fj = tp * others
    fjj = -2.0 * others
    return f, fj, fjj


def _product_excluding(factors: np.ndarray) -> np.ndarray:
    """others[j] = product over k != j of factors[k], along axis 0."""
    dim = factors.shape[0]
    prefix = np.ones_like(factors)
    suffix = np.ones_like(factors)
    for j in range(1, dim):
        prefix[j] = prefix[j - 1] * factors[j - 1]
        suffix[dim - 1 - j] = suffix[dim - j] * factors[dim - j]
    return prefix * suffix


def extended_forward(
    spec: NetworkSpec,
    params: ParamVector,
    points: np.ndarray,
    lift: AffineLift | None = None,
) -> DerivativeBundle:
    """Trial value, gradient, and diagonal Hessian at the given points."""
    x = as_points(points, spec.input_dim)
    bundle, _ = _forward_with_cache(spec, params, x)
    if lift is not None:
        bundle.value = bundle.value + lift.value(x)
        bundle.grad = bundle.grad + lift.slope
    return bundle


def loss_and_gradient(
    problem,
    source,
    mu: float,
    spec: NetworkSpec,
    params: ParamVector,
    collocation: np.ndarray,
    lift: AffineLift | None = None,
) -> LossReport:
    """Mean squared residual of mu * source - A[trial] and its exact gradient.

    ``source`` is either a callable on (P, d) points or an array of values
    already evaluated on the collocation set. The operator A is read off the
    problem's pointwise coefficients, so the residual is linear in the trial's
    derivative bundle and the adjoint seeding is exact.
    """
    x = as_points(collocation, problem.dim)
    npts = x.shape[0]
    if npts == 0:
        raise ValueError("collocation set is empty")
    svals = source(x) if callable(source) else np.asarray(source, dtype=np.float64)
    if svals.shape != (npts,):
        raise ValueError(f"source values have shape {svals.shape}, expected ({npts},)")
    core, cache = _forward_with_cache(spec, params, x)
    u, du, d2u = core.value, core.grad, core.diag_hess
    if lift is not None:
        u = u + lift.value(x)
        du = du + lift.slope
    au = problem.value_coeff * u + du @ problem.grad_coeffs + d2u @ problem.hess_coeffs
    res = mu * svals - au
    loss = float(np.mean(res * res))
    coef = (-2.0 / npts) * res
    lam_u = problem.value_coeff * coef
    lam_du = problem.grad_coeffs[:, None] * coef[None, :]
    lam_d2u = problem.hess_coeffs[:, None] * coef[None, :]
    grad = _backward(spec, params, cache, lam_u, lam_du, lam_d2u)
    return LossReport(loss=loss, gradient=grad, residuals=res)


def finite_diff_gradient(closure, params: ParamVector, step: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of a scalar closure, one coordinate at a time."""
    base = params.values
    grad = np.empty_like(base)
    for i in range(base.size):
        up = base.copy()
        dn = base.copy()
        up[i] += step
        dn[i] -= step
        grad[i] = (closure(ParamVector(up)) - closure(ParamVector(dn))) / (2.0 * step)
    return grad


def _forward_with_cache(spec: NetworkSpec, params: ParamVector, x: np.ndarray):
    """Run the extended forward pass, keeping every intermediate for reverse mode."""
    layers = unpack_params(spec, params)
    state = input_state(spec, x)
    states = [state]
    act_caches = []
    for w, b in layers[:-1]:
        state = affine_state(w, b, state)
        if spec.activation == "tanh":
            state, cache = tanh_state(state)
        else:
            cache = None
        act_caches.append(cache)
        states.append(state)
    w, b = layers[-1]
    out = affine_state(w, b, state)
    factor = boundary_terms(spec, x)
    bundle = _apply_boundary(spec, out, factor)
    cache = (x, layers, states, act_caches, out, factor)
    return bundle, cache


def _apply_boundary(spec: NetworkSpec, out, factor) -> DerivativeBundle:
    y, dy, ey = out
    if spec.architecture == FOURIER_SINE:
        f, fj, fjj = factor
        m = spec.num_wavenumbers
        u = (f * y).sum(axis=1) / m
        du = (fj * y[None] + f[None] * dy).sum(axis=2).T / m
        d2u = (fjj * y[None] + 2.0 * fj * dy + f[None] * ey).sum(axis=2).T / m
        return DerivativeBundle(u, du, d2u)
    f, fj, fjj = factor
    yv, dyv, eyv = y[:, 0], dy[:, :, 0], ey[:, :, 0]
    u = f * yv
    du = (fj * yv[None] + f[None] * dyv).T
    d2u = (fjj * yv[None] + 2.0 * fj * dyv + f[None] * eyv).T
    return DerivativeBundle(u, du, d2u)


def _backward(spec, params, cache, lam_u, lam_du, lam_d2u) -> np.ndarray:
    """Reverse accumulation through boundary assembly and every layer.

    lam_* are the loss adjoints of the bundle fields: lam_u (P,), lam_du and
    lam_d2u (d, P). Returns the flat gradient in pack_params layout.
    """
    x, layers, states, act_caches, out, factor = cache
    y, dy, ey = out

    if spec.architecture == FOURIER_SINE:
        f, fj, fjj = factor
        m = spec.num_wavenumbers
        gy = f * lam_u[:, None]
        gdy = np.empty_like(dy)
        gey = np.empty_like(ey)
        dim = dy.shape[0]
        for j in range(dim):
            gy += fj[j] * lam_du[j][:, None] + fjj[j] * lam_d2u[j][:, None]
            gdy[j] = f * lam_du[j][:, None] + 2.0 * fj[j] * lam_d2u[j][:, None]
            gey[j] = f * lam_d2u[j][:, None]
        gy /= m
        gdy /= m
        gey /= m
    else:
        f, fj, fjj = factor
        gy1 = f * lam_u + (fj * lam_du + fjj * lam_d2u).sum(axis=0)
        gy = gy1[:, None]
        gdy = (f[None] * lam_du + 2.0 * fj * lam_d2u)[:, :, None]
        gey = (f[None] * lam_d2u)[:, :, None]

    grads = [None] * len(layers)
    w_out, _ = layers[-1]
    gw, gb, gstate = _affine_backward(w_out, states[-1], (gy, gdy, gey))
    grads[-1] = (gw, gb)

    for i in range(len(layers) - 2, -1, -1):
        if spec.activation == "tanh":
            gstate = _tanh_backward(act_caches[i], gstate)
        w, _ = layers[i]
        gw, gb, gstate = _affine_backward(w, states[i], gstate)
        grads[i] = (gw, gb)

    parts = []
    for gw, gb in grads:
        parts.append(gw.ravel())
        parts.append(gb)
    return np.concatenate(parts)


def _affine_backward(w, prev_state, gstate):
    """Adjoint of affine_state: parameter grads plus the upstream state adjoint."""
    z, d, e = prev_state
    ga, gda, gea = gstate
    dim, npts, nin = d.shape
    nout = w.shape[0]
    gde = np.concatenate([gda, gea], axis=0).reshape(2 * dim * npts, nout)
    de = np.concatenate([d, e], axis=0).reshape(2 * dim * npts, nin)
    gw = ga.T @ z + gde.T @ de
    gb = ga.sum(axis=0)
    gz = ga @ w
    gde_prev = (gde @ w).reshape(2 * dim, npts, nin)
    return gw, gb, (gz, gde_prev[:dim], gde_prev[dim:])


def _tanh_backward(cache, gstate):
    """Adjoint of tanh_state.

    Forward: z = t, d = s * da, e = s * ea + q * da^2 with s = 1 - t^2 and
    q = -2 t s. Both s and q are functions of t, so their adjoints feed back
    into the pre-activation through ds/dt = -2t and dq/dt = 6t^2 - 2.
    """
    t, s, q, da, ea = cache
    gz, gd, ge = gstate
    gs = (gd * da + ge * ea).sum(axis=0)
    gq = (ge * da * da).sum(axis=0)
    gda = s[None] * gd + 2.0 * q[None] * da * ge
    gea = s[None] * ge
    gt = gz - 2.0 * t * gs + (6.0 * t * t - 2.0) * gq
    ga = s * gt
    return ga, gda, gea
