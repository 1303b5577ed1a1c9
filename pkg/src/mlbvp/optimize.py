"""First-order and quasi-Newton training loops.

Both optimizers consume an objective ``f(params) -> (loss, flat_gradient)``
and are fully deterministic: no randomness, fixed evaluation order. Training
runs Adam first to find the basin, then L-BFGS with a strong-Wolfe line
search to polish; L-BFGS stalling in the line search at numerical precision
is the normal terminal state and is reported, not raised.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import ParamVector


@dataclass
class AdamConfig:
    num_iterations: int
    learning_rate: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class LbfgsConfig:
    num_iterations: int
    history_size: int = 10
    initial_step: float = 1.0
    c1: float = 1e-4
    c2: float = 0.9
    max_line_search: int = 25
    grad_tol: float = 1e-16


@dataclass
class TrainStep:
    """One parameter update: the loss is the value the step was computed from."""

    iteration: int
    phase: str
    loss: float
    l2: float | None = None
    h1: float | None = None


@dataclass
class TrainRecord:
    steps: list[TrainStep] = field(default_factory=list)
    stop_reason: str = "completed"


class NonFiniteLossError(RuntimeError):
    """Loss or gradient became NaN/inf; carries the partial record."""

    def __init__(self, message: str, record: TrainRecord | None = None):
        super().__init__(message)
        self.record = record


def _check_finite(loss: float, grad: np.ndarray, phase: str, iteration: int, record: TrainRecord):
    if not np.isfinite(loss) or not np.all(np.isfinite(grad)):
        record.stop_reason = "non-finite"
        raise NonFiniteLossError(
            f"non-finite loss or gradient in {phase} at iteration {iteration}", record
        )


def adam_run(
    objective,
    params: ParamVector,
    config: AdamConfig,
    callback=None,
    record: TrainRecord | None = None,
    start_iteration: int = 0,
) -> tuple[ParamVector, TrainRecord]:
    """Adam with bias correction; eps is added after the square root."""
    record = TrainRecord() if record is None else record
    theta = params.values.copy()
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    for t in range(1, config.num_iterations + 1):
        it = start_iteration + t
        loss, grad = objective(ParamVector(theta))
        _check_finite(loss, grad, "adam", it, record)
        m = config.beta1 * m + (1.0 - config.beta1) * grad
        v = config.beta2 * v + (1.0 - config.beta2) * grad * grad
        mhat = m / (1.0 - config.beta1**t)
        vhat = v / (1.0 - config.beta2**t)
        theta = theta - config.learning_rate * mhat / (np.sqrt(vhat) + config.eps)
        step = TrainStep(iteration=it, phase="adam", loss=loss)
        record.steps.append(step)
        if callback is not None:
            callback(step, ParamVector(theta))
    return ParamVector(theta), record


def lbfgs_run(
    objective,
    params: ParamVector,
    config: LbfgsConfig,
    callback=None,
    record: TrainRecord | None = None,
    start_iteration: int = 0,
) -> tuple[ParamVector, TrainRecord]:
    """Limited-memory BFGS (two-loop recursion) with a strong-Wolfe line search.

    Curvature pairs with s.y <= 1e-14 ||s|| ||y|| are skipped. A failed line
    search moves to the best point it saw (when that improves the loss) and
    stops the run with stop_reason "line-search-failure".
    """
    record = TrainRecord() if record is None else record
    theta = params.values.copy()
    if config.num_iterations == 0:
        return ParamVector(theta), record

    def evaluate(vec: np.ndarray):
        loss, grad = objective(ParamVector(vec))
        return float(loss), np.asarray(grad, dtype=np.float64)

    loss, grad = evaluate(theta)
    _check_finite(loss, grad, "lbfgs", start_iteration, record)
    if np.linalg.norm(grad) <= config.grad_tol:
        record.stop_reason = "gradient-tolerance"
        return ParamVector(theta), record

    history: list[tuple[np.ndarray, np.ndarray, float]] = []
    gamma = 1.0
    for t in range(1, config.num_iterations + 1):
        it = start_iteration + t
        direction = _two_loop(grad, history, gamma)
        gtd = float(grad @ direction)
        if gtd >= 0.0:
            # curvature memory has gone stale; fall back to steepest descent
            history.clear()
            direction = -grad
            gtd = float(grad @ direction)
        new_loss, new_grad, step_len, wolfe_ok = _strong_wolfe(
            lambda a: evaluate(theta + a * direction),
            direction,
            loss,
            grad,
            gtd,
            config,
        )
        _check_finite(new_loss, new_grad, "lbfgs", it, record)
        if not wolfe_ok:
            if new_loss < loss and step_len > 0.0:
                theta = theta + step_len * direction
            record.stop_reason = "line-search-failure"
            return ParamVector(theta), record
        s = step_len * direction
        y = new_grad - grad
        sy = float(s @ y)
        if sy > 1e-14 * np.linalg.norm(s) * np.linalg.norm(y):
            history.append((s, y, 1.0 / sy))
            if len(history) > config.history_size:
                history.pop(0)
            gamma = sy / float(y @ y)
        theta = theta + s
        step = TrainStep(iteration=it, phase="lbfgs", loss=loss)
        record.steps.append(step)
        loss, grad = new_loss, new_grad
        if callback is not None:
            callback(step, ParamVector(theta))
        if np.linalg.norm(grad) <= config.grad_tol:
            record.stop_reason = "gradient-tolerance"
            break
    return ParamVector(theta), record


def two_phase_train(
    objective,
    params: ParamVector,
    adam_config: AdamConfig,
    lbfgs_config: LbfgsConfig,
    callback=None,
) -> tuple[ParamVector, TrainRecord]:
    """Adam then L-BFGS on the same objective, iterations numbered through."""
    record = TrainRecord()
    params, record = adam_run(objective, params, adam_config, callback, record, 0)
    params, record = lbfgs_run(
        objective, params, lbfgs_config, callback, record, adam_config.num_iterations
    )
    return params, record


def _two_loop(grad: np.ndarray, history, gamma: float) -> np.ndarray:
    """Two-loop recursion for the L-BFGS direction -H grad."""
    q = grad.copy()
    alphas = []
    for s, y, rho in reversed(history):
        a = rho * float(s @ q)
        alphas.append(a)
        q -= a * y
    r = gamma * q if history else q
    for (s, y, rho), a in zip(history, reversed(alphas)):
        b = rho * float(y @ r)
        r += (a - b) * s
    return -r


def _cubic_interpolate(x1, f1, g1, x2, f2, g2, bounds=None):
    """Minimizer of the cubic fitting two (position, value, slope) samples."""
    if bounds is not None:
        xmin_bound, xmax_bound = bounds
    else:
        xmin_bound, xmax_bound = (x1, x2) if x1 <= x2 else (x2, x1)
    d1 = g1 + g2 - 3.0 * (f1 - f2) / (x1 - x2)
    d2_square = d1 * d1 - g1 * g2
    if d2_square >= 0.0:
        d2 = np.sqrt(d2_square)
        # equal slopes on a line make the update 0/0; fall through to bisection
        with np.errstate(divide="ignore", invalid="ignore"):
            if x1 <= x2:
                min_pos = x2 - (x2 - x1) * ((g2 + d2 - d1) / (g2 - g1 + 2.0 * d2))
            else:
                min_pos = x1 - (x1 - x2) * ((g1 + d2 - d1) / (g1 - g2 + 2.0 * d2))
        if np.isfinite(min_pos):
            return min(max(min_pos, xmin_bound), xmax_bound)
    return (xmin_bound + xmax_bound) / 2.0


def _strong_wolfe(evaluate, direction, f0, g0, gtd0, config: LbfgsConfig):
    """Bracket-and-zoom line search enforcing both strong Wolfe conditions.

    Returns (loss, gradient, step, satisfied). When the bracket collapses or
    the evaluation budget runs out before both conditions hold, ``satisfied``
    is False and the best point seen is returned.
    """
    c1, c2 = config.c1, config.c2
    tolerance_change = 1e-9
    d_norm = float(np.max(np.abs(direction)))
    t = config.initial_step
    f_new, g_new = evaluate(t)
    ls_evals = 1
    gtd_new = float(g_new @ direction)

    # bracketing phase: grow the step until the minimum is straddled
    t_prev, f_prev, g_prev, gtd_prev = 0.0, f0, g0, gtd0
    done = False
    while ls_evals < config.max_line_search:
        if f_new > f0 + c1 * t * gtd0 or (ls_evals > 1 and f_new >= f_prev):
            bracket = [t_prev, t]
            bracket_f = [f_prev, f_new]
            bracket_g = [g_prev, g_new]
            bracket_gtd = [gtd_prev, gtd_new]
            break
        if abs(gtd_new) <= -c2 * gtd0:
            return f_new, g_new, t, True
        if gtd_new >= 0.0:
            bracket = [t_prev, t]
            bracket_f = [f_prev, f_new]
            bracket_g = [g_prev, g_new]
            bracket_gtd = [gtd_prev, gtd_new]
            break
        min_step = t + 0.01 * (t - t_prev)
        max_step = t * 10.0
        t_next = _cubic_interpolate(t_prev, f_prev, gtd_prev, t, f_new, gtd_new, (min_step, max_step))
        t_prev, f_prev, g_prev, gtd_prev = t, f_new, g_new, gtd_new
        t = t_next
        f_new, g_new = evaluate(t)
        ls_evals += 1
        gtd_new = float(g_new @ direction)
    else:
        bracket = [0.0, t]
        bracket_f = [f0, f_new]
        bracket_g = [g0, g_new]
        bracket_gtd = [gtd0, gtd_new]

    # zoom phase: shrink the bracket with cubic steps until Wolfe holds
    insuf_progress = False
    low, high = (0, 1) if bracket_f[0] <= bracket_f[1] else (1, 0)
    while not done and ls_evals < config.max_line_search:
        if abs(bracket[1] - bracket[0]) * d_norm < tolerance_change:
            break
        t = _cubic_interpolate(
            bracket[0], bracket_f[0], bracket_gtd[0], bracket[1], bracket_f[1], bracket_gtd[1]
        )
        margin = 0.1 * (max(bracket) - min(bracket))
        if min(max(bracket) - t, t - min(bracket)) < margin:
            if insuf_progress or t >= max(bracket) or t <= min(bracket):
                if abs(t - max(bracket)) < abs(t - min(bracket)):
                    t = max(bracket) - margin
                else:
                    t = min(bracket) + margin
                insuf_progress = False
            else:
                insuf_progress = True
        else:
            insuf_progress = False
        f_new, g_new = evaluate(t)
        ls_evals += 1
        gtd_new = float(g_new @ direction)
        if f_new > f0 + c1 * t * gtd0 or f_new >= bracket_f[low]:
            bracket[high] = t
            bracket_f[high] = f_new
            bracket_g[high] = g_new
            bracket_gtd[high] = gtd_new
            low, high = (0, 1) if bracket_f[0] <= bracket_f[1] else (1, 0)
        else:
            if abs(gtd_new) <= -c2 * gtd0:
                done = True
            elif gtd_new * (bracket[high] - bracket[low]) >= 0.0:
                bracket[high] = bracket[low]
                bracket_f[high] = bracket_f[low]
                bracket_g[high] = bracket_g[low]
                bracket_gtd[high] = bracket_gtd[low]
            bracket[low] = t
            bracket_f[low] = f_new
            bracket_g[low] = g_new
            bracket_gtd[low] = gtd_new

    return bracket_f[low], bracket_g[low], bracket[low], done