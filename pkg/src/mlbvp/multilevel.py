"""The multi-level correction loop.

Level 0 fits the problem's own source; level i >= 1 fits the residual left
by the composite of levels 0..i-1, magnified by a scale factor mu_i so the
network trains on order-one data. The composite approximation is

    u(x) = sum_i  u_i(x) / (mu_0 * ... * mu_i),

where u_0 absorbs mu_0 times the affine lift when the problem has one, so
the composite carries the boundary data exactly. Unrolling the recursion
R_i = mu_i R_{i-1} - A[u_i] gives the closed form used here to evaluate the
next level's training source:

    R_i(x) = (mu_0 * ... * mu_i) * (f(x) - A[composite_i](x)).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .autodiff import DerivativeBundle, extended_forward, loss_and_gradient
from .model import FOURIER_SINE, PLAIN_G, NetworkSpec, ParamVector, as_points, xavier_init
from .optimize import (
    AdamConfig,
    LbfgsConfig,
    NonFiniteLossError,
    TrainRecord,
    two_phase_train,
)
from .problems import ProblemDef, interior_grid
from .scaling import ScaleEstimate, elm_estimate_scale, make_elm_basis


@dataclass
class LevelConfig:
    """Architecture, optimizer budgets, and scale policy for one level.

    ``mu`` pins the scale factor; leaving it None asks the ELM estimator.
    ``seed`` and ``collocation`` default to run-wide values when None.
    """

    hidden_widths: tuple[int, ...]
    adam: AdamConfig
    lbfgs: LbfgsConfig
    num_wavenumbers: int = 1
    architecture: str = FOURIER_SINE
    mu: float | None = None
    seed: int | None = None
    collocation: int | None = None

    def network_spec(self, dim: int, domain_length: float) -> NetworkSpec:
        m = 0 if self.architecture == PLAIN_G else self.num_wavenumbers
        return NetworkSpec(
            input_dim=dim,
            hidden_widths=tuple(self.hidden_widths),
            num_wavenumbers=m,
            domain_length=domain_length,
            architecture=self.architecture,
        )


@dataclass
class TrainedLevel:
    spec: NetworkSpec
    params: ParamVector
    mu: float


@dataclass
class CompositeSolution:
    """Weighted sum of trained levels; the level-0 term carries the lift."""

    problem: ProblemDef
    levels: list[TrainedLevel] = field(default_factory=list)

    def weights(self) -> np.ndarray:
        """weight_i = 1 / (mu_0 ... mu_i)."""
        mus = np.array([lvl.mu for lvl in self.levels])
        return 1.0 / np.cumprod(mus)

    def level_lift(self, index: int):
        if index == 0 and self.problem.lift is not None and self.levels:
            return self.problem.lift.scaled(self.levels[0].mu)
        return None

    def bundle(self, points) -> DerivativeBundle:
        x = as_points(points, self.problem.dim)
        value = np.zeros(x.shape[0])
        grad = np.zeros((x.shape[0], self.problem.dim))
        diag_hess = np.zeros((x.shape[0], self.problem.dim))
        for i, (lvl, w) in enumerate(zip(self.levels, self.weights())):
            b = extended_forward(lvl.spec, lvl.params, x, lift=self.level_lift(i))
            value += w * b.value
            grad += w * b.grad
            diag_hess += w * b.diag_hess
        return DerivativeBundle(value, grad, diag_hess)

    def value(self, points) -> np.ndarray:
        return self.bundle(points).value

    @property
    def mu_product(self) -> float:
        out = 1.0
        for lvl in self.levels:
            out *= lvl.mu
        return out


def composite_eval(composite: CompositeSolution, points) -> DerivativeBundle:
    return composite.bundle(points)


def residual_source(
    composite: CompositeSolution, problem: ProblemDef | None = None
) -> Callable[[np.ndarray], np.ndarray]:
    """Training source for the next level: the scaled residual of the composite."""
    problem = problem if problem is not None else composite.problem
    scale = composite.mu_product

    def source(points: np.ndarray) -> np.ndarray:
        x = as_points(points, problem.dim)
        return scale * (problem.source(x) - problem.operator(composite.bundle(x)))

    return source


@dataclass(frozen=True)
class ErrorMetrics:
    l2: float
    h1: float
    max_abs: float
    points_per_axis: int


def error_metrics(solution, problem: ProblemDef, points_per_axis: int | None = None) -> ErrorMetrics:
    """L2, H1, and max errors against the exact solution on a midpoint grid.

    ``solution`` is anything with a ``bundle(points)`` method; norms use the
    midpoint quadrature weight |domain| / P.
    """
    n = points_per_axis or (4096 if problem.dim == 1 else 128)
    grid = interior_grid(problem.dim, n, problem.domain_length)
    approx = solution.bundle(grid)
    e = problem.exact(grid) - approx.value
    eg = problem.exact_grad(grid) - approx.grad
    vol = problem.domain_length**problem.dim
    l2_sq = vol * float(np.mean(e * e))
    h1 = float(np.sqrt(l2_sq + vol * np.mean(np.sum(eg * eg, axis=1))))
    return ErrorMetrics(
        l2=float(np.sqrt(l2_sq)), h1=h1, max_abs=float(np.max(np.abs(e))), points_per_axis=n
    )


@dataclass
class RunOptions:
    """Run-wide knobs; level configs override collocation and seeds locally."""

    seed: int = 0
    metrics_stride: int = 10
    collocation_per_axis: int | None = None  # default 1024 in 1-d, 64 in 2-d
    eval_per_axis: int | None = None  # default 4096 in 1-d, 128 in 2-d
    elm_width: int = 50
    log: Callable[[str], None] | None = None


@dataclass
class MultilevelResult:
    composite: CompositeSolution
    records: list[TrainRecord]
    metrics: list[ErrorMetrics]  # composite error after each level
    scales: list[ScaleEstimate | None]  # None where mu was pinned
    final_losses: list[float]
    wall_times: list[float]


class MultilevelError(RuntimeError):
    """A level aborted; partial results are attached."""

    def __init__(self, message: str, partial: MultilevelResult):
        super().__init__(message)
        self.partial = partial


def run_multilevel(
    problem: ProblemDef,
    levels: list[LevelConfig],
    options: RunOptions | None = None,
) -> MultilevelResult:
    """Train the level sequence and return the composite with diagnostics."""
    options = options or RunOptions()
    log = options.log or (lambda message: None)
    dim = problem.dim
    colloc_default = options.collocation_per_axis or (1024 if dim == 1 else 64)
    eval_n = options.eval_per_axis or (4096 if dim == 1 else 128)

    eval_grid = interior_grid(dim, eval_n, problem.domain_length)
    exact_vals = problem.exact(eval_grid)
    exact_grads = problem.exact_grad(eval_grid)
    vol = problem.domain_length**dim

    composite = CompositeSolution(problem, [])
    result = MultilevelResult(composite, [], [], [], [], [])
    prefix_value = np.zeros(eval_grid.shape[0])
    prefix_grad = np.zeros_like(exact_grads)

    for i, cfg in enumerate(levels):
        t0 = time.perf_counter()
        colloc = interior_grid(dim, cfg.collocation or colloc_default, problem.domain_length)
        if i == 0:
            source_vals = problem.source(colloc)
            elm_rhs = source_vals
            if problem.lift is not None:
                lift_bundle = DerivativeBundle(
                    problem.lift.value(colloc),
                    np.broadcast_to(problem.lift.slope, colloc.shape),
                    np.zeros_like(colloc),
                )
                elm_rhs = source_vals - problem.operator(lift_bundle)
        else:
            source_vals = residual_source(composite)(colloc)
            elm_rhs = source_vals

        if cfg.mu is not None:
            mu, estimate = float(cfg.mu), None
        else:
            basis = make_elm_basis(
                dim,
                problem.domain_length,
                num_wavenumbers=max(cfg.num_wavenumbers, 1),
                width=options.elm_width,
                seed=options.seed + 1000 + i,
            )
            estimate = elm_estimate_scale(problem, elm_rhs, basis, colloc)
            mu = estimate.mu
            log(f"level {i}: ELM amplitude {estimate.amplitude:.3e} -> mu {mu:.6e}")
        result.scales.append(estimate)

        spec = cfg.network_spec(dim, problem.domain_length)
        params = xavier_init(spec, cfg.seed if cfg.seed is not None else options.seed + i)
        lift = problem.lift.scaled(mu) if (i == 0 and problem.lift is not None) else None

        def objective(p: ParamVector):
            rep = loss_and_gradient(problem, source_vals, mu, spec, p, colloc, lift=lift)
            return rep.loss, rep.gradient

        weight = 1.0 / (composite.mu_product * mu)
        total_iters = cfg.adam.num_iterations + cfg.lbfgs.num_iterations

        def metrics_callback(step, p: ParamVector):
            due = (
                step.phase == "lbfgs"
                or step.iteration % options.metrics_stride == 0
                or step.iteration == total_iters
            )
            if not due:
                return
            b = extended_forward(spec, p, eval_grid, lift=lift)
            e = exact_vals - (prefix_value + weight * b.value)
            eg = exact_grads - (prefix_grad + weight * b.grad)
            l2_sq = vol * float(np.mean(e * e))
            step.l2 = float(np.sqrt(l2_sq))
            step.h1 = float(np.sqrt(l2_sq + vol * np.mean(np.sum(eg * eg, axis=1))))

        log(
            f"level {i}: training {spec.architecture} widths={cfg.hidden_widths} "
            f"M={spec.num_wavenumbers} mu={mu:.6e} "
            f"({cfg.adam.num_iterations} adam + {cfg.lbfgs.num_iterations} lbfgs)"
        )
        try:
            params, record = two_phase_train(objective, params, cfg.adam, cfg.lbfgs, metrics_callback)
        except NonFiniteLossError as err:
            result.records.append(err.record if err.record is not None else TrainRecord())
            result.wall_times.append(time.perf_counter() - t0)
            raise MultilevelError(f"level {i} aborted: {err}", result) from err

        composite.levels.append(TrainedLevel(spec=spec, params=params, mu=mu))
        result.records.append(record)
        result.final_losses.append(objective(params)[0])

        final_bundle = extended_forward(spec, params, eval_grid, lift=lift)
        prefix_value = prefix_value + weight * final_bundle.value
        prefix_grad = prefix_grad + weight * final_bundle.grad
        e = exact_vals - prefix_value
        eg = exact_grads - prefix_grad
        l2_sq = vol * float(np.mean(e * e))
        metrics = ErrorMetrics(
            l2=float(np.sqrt(l2_sq)),
            h1=float(np.sqrt(l2_sq + vol * np.mean(np.sum(eg * eg, axis=1)))),
            max_abs=float(np.max(np.abs(e))),
            points_per_axis=eval_n,
        )
        result.metrics.append(metrics)
        result.wall_times.append(time.perf_counter() - t0)
        log(
            f"level {i}: loss {result.final_losses[-1]:.3e} "
            f"L2 {metrics.l2:.3e} H1 {metrics.h1:.3e} max {metrics.max_abs:.3e} "
            f"({result.wall_times[-1]:.1f}s, {record.stop_reason})"
        )
    return result
