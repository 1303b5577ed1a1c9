"""Command-line front end: run experiments, check gradients, merge reports.

Config files are flat INI-style sections: one ``[problem]`` section, one
optional ``[run]`` section, and one ``[level N]`` section per level, numbered
from 0. See docs/config-format.md for the schema. Numeric output uses 17
significant digits so every 64-bit float round-trips exactly.

Heavy imports happen inside the command functions, after ``--threads`` has
had a chance to cap the BLAS pools via environment variables.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import json
import os
import sys
import time
from pathlib import Path

OUTPUT_ROOT_ENV = "MLBVP_OUTPUT_ROOT"

_thread_limiter = None  # keeps a threadpoolctl limiter alive for the process


class ConfigError(Exception):
    """Invalid experiment config; the message names the offending field."""


def _limit_threads(count: int | None) -> None:
    if count is None:
        return
    if count < 1:
        raise ConfigError(f"--threads must be positive, got {count}")
    for var in (
        "OMP_NUM_THREADS",
        "OPENBLAS_NUM_THREADS",
        "MKL_NUM_THREADS",
        "NUMEXPR_NUM_THREADS",
        "VECLIB_MAXIMUM_THREADS",
    ):
        os.environ[var] = str(count)
    try:
        import threadpoolctl

        global _thread_limiter
        _thread_limiter = threadpoolctl.threadpool_limits(count)
    except ImportError:
        pass  # env vars above still apply if numpy was not imported yet


def _fmt(value) -> str:
    """17-significant-digit decimal; empty string for missing values."""
    if value is None:
        return ""
    return f"{value:.17g}"


def _get_typed(section, key: str, parse, default, where: str):
    raw = section.get(key)
    if raw is None:
        return default
    try:
        return parse(raw)
    except ValueError as err:
        raise ConfigError(f"[{where}] {key} = {raw!r}: {err}") from None


def _parse_widths(raw: str) -> tuple[int, ...]:
    parts = [p for chunk in raw.split(",") for p in chunk.split()]
    widths = tuple(int(p) for p in parts)
    if not widths:
        raise ValueError("empty width list")
    return widths


_RUN_KEYS = {"seed", "collocation", "eval_grid", "metrics_stride", "elm_width", "output"}
_LEVEL_KEYS = {
    "widths",
    "wavenumbers",
    "architecture",
    "adam_iterations",
    "adam_learning_rate",
    "lbfgs_iterations",
    "lbfgs_history",
    "mu",
    "seed",
    "collocation",
}
_PROBLEM_KEYS = {"label", "k", "epsilon", "kappa_sq"}


def parse_experiment_config(path):
    """Read and validate a config file; returns the resolved settings.

    All defaults are filled in here so the echo written to summary.json is
    sufficient to reproduce the run bit for bit.
    """
    from .multilevel import LevelConfig
    from .optimize import AdamConfig, LbfgsConfig

    parser = configparser.ConfigParser()
    try:
        read = parser.read(path)
    except configparser.Error as err:
        raise ConfigError(f"malformed config file {path}: {err}") from None
    if not read:
        raise ConfigError(f"cannot read config file {path}")

    if "problem" not in parser:
        raise ConfigError("missing [problem] section")
    psec = parser["problem"]
    unknown = set(psec) - _PROBLEM_KEYS
    if unknown:
        raise ConfigError(f"[problem] unknown keys: {sorted(unknown)}")
    label = psec.get("label")
    if label is None:
        raise ConfigError("[problem] label is required")
    params = {}
    if "k" in psec:
        params["k"] = _get_typed(psec, "k", int, None, "problem")
    if "epsilon" in psec:
        params["epsilon"] = _get_typed(psec, "epsilon", float, None, "problem")
    if "kappa_sq" in psec:
        params["kappa_sq"] = _get_typed(psec, "kappa_sq", float, None, "problem")

    rsec = parser["run"] if "run" in parser else {}
    if rsec:
        unknown = set(rsec) - _RUN_KEYS
        if unknown:
            raise ConfigError(f"[run] unknown keys: {sorted(unknown)}")
    run = {
        "seed": _get_typed(rsec, "seed", int, 0, "run"),
        "collocation": _get_typed(rsec, "collocation", int, None, "run"),
        "eval_grid": _get_typed(rsec, "eval_grid", int, None, "run"),
        "metrics_stride": _get_typed(rsec, "metrics_stride", int, 10, "run"),
        "elm_width": _get_typed(rsec, "elm_width", int, 50, "run"),
        "output": rsec.get("output") if rsec else None,
    }

    level_names = [s for s in parser.sections() if s.startswith("level")]
    extra = set(parser.sections()) - set(level_names) - {"problem", "run"}
    if extra:
        raise ConfigError(f"unknown sections: {sorted(extra)}")
    if not level_names:
        raise ConfigError("at least one [level 0] section is required")
    expected = [f"level {i}" for i in range(len(level_names))]
    if sorted(level_names, key=lambda s: s.split()[-1]) != expected and set(level_names) != set(
        expected
    ):
        raise ConfigError(f"level sections must be named {expected}, got {sorted(level_names)}")

    levels = []
    levels_echo = []
    for i in range(len(level_names)):
        name = f"level {i}"
        sec = parser[name]
        unknown = set(sec) - _LEVEL_KEYS
        if unknown:
            raise ConfigError(f"[{name}] unknown keys: {sorted(unknown)}")
        if "widths" not in sec:
            raise ConfigError(f"[{name}] widths is required")
        widths = _get_typed(sec, "widths", _parse_widths, None, name)
        arch = sec.get("architecture", "fourier-sine")
        if arch not in ("fourier-sine", "fourier-g", "plain-g"):
            raise ConfigError(f"[{name}] unknown architecture {arch!r}")
        adam_iters = _get_typed(sec, "adam_iterations", int, None, name)
        lbfgs_iters = _get_typed(sec, "lbfgs_iterations", int, None, name)
        if adam_iters is None or lbfgs_iters is None:
            raise ConfigError(f"[{name}] adam_iterations and lbfgs_iterations are required")
        mu_raw = sec.get("mu", "1" if i == 0 else "elm")
        if mu_raw.strip().lower() == "elm":
            mu = None
        else:
            try:
                mu = float(mu_raw)
            except ValueError:
                raise ConfigError(f"[{name}] mu = {mu_raw!r}: not a number or 'elm'") from None
            if mu <= 0.0:
                raise ConfigError(f"[{name}] mu must be positive or 'elm'")
        level = LevelConfig(
            hidden_widths=widths,
            adam=AdamConfig(
                num_iterations=adam_iters,
                learning_rate=_get_typed(sec, "adam_learning_rate", float, 1e-2, name),
            ),
            lbfgs=LbfgsConfig(
                num_iterations=lbfgs_iters,
                history_size=_get_typed(sec, "lbfgs_history", int, 10, name),
            ),
            num_wavenumbers=_get_typed(sec, "wavenumbers", int, 1, name),
            architecture=arch,
            mu=mu,
            seed=_get_typed(sec, "seed", int, None, name),
            collocation=_get_typed(sec, "collocation", int, None, name),
        )
        levels.append(level)
        levels_echo.append(
            {
                "widths": list(widths),
                "architecture": arch,
                "wavenumbers": level.num_wavenumbers,
                "adam_iterations": adam_iters,
                "adam_learning_rate": level.adam.learning_rate,
                "lbfgs_iterations": lbfgs_iters,
                "lbfgs_history": level.lbfgs.history_size,
                "mu": "elm" if mu is None else mu,
                "seed": level.seed,
                "collocation": level.collocation,
            }
        )

    echo = {"problem": {"label": label, **params}, "run": run, "levels": levels_echo}
    return {"label": label, "params": params, "run": run, "levels": levels, "echo": echo}


def _resolve_out_dir(config_path: Path, cfg, out_flag: str | None) -> Path:
    if out_flag:
        return Path(out_flag)
    if cfg["run"]["output"]:
        return Path(cfg["run"]["output"])
    root = Path(os.environ.get(OUTPUT_ROOT_ENV, "runs"))
    return root / config_path.stem


def _write_history(path: Path, record) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "phase", "loss", "l2", "h1"])
        for step in record.steps:
            writer.writerow(
                [step.iteration, step.phase, _fmt(step.loss), _fmt(step.l2), _fmt(step.h1)]
            )


def _write_solution(path: Path, problem, composite, eval_n: int) -> None:
    import numpy as np

    from .problems import interior_grid

    grid = interior_grid(problem.dim, eval_n, problem.domain_length)
    exact = problem.exact(grid)
    approx = composite.bundle(grid).value if composite.levels else np.zeros(grid.shape[0])
    coords = ["x", "y"][: problem.dim]
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(coords + ["exact", "approx", "error"])
        for p in range(grid.shape[0]):
            row = [_fmt(grid[p, j]) for j in range(problem.dim)]
            writer.writerow(row + [_fmt(exact[p]), _fmt(approx[p]), _fmt(exact[p] - approx[p])])


def run_experiment(config_path: str, out_dir: str | None = None) -> int:
    """Execute a config end to end, writing histories, solution, and summary."""
    from . import __version__
    from .multilevel import MultilevelError, RunOptions, run_multilevel
    from .problems import make_problem

    cfg = parse_experiment_config(config_path)
    try:
        problem = make_problem(cfg["label"], **cfg["params"])
    except ValueError as err:
        raise ConfigError(f"[problem] {err}") from None

    run = cfg["run"]
    out = _resolve_out_dir(Path(config_path), cfg, out_dir)
    out.mkdir(parents=True, exist_ok=True)
    options = RunOptions(
        seed=run["seed"],
        metrics_stride=run["metrics_stride"],
        collocation_per_axis=run["collocation"],
        eval_per_axis=run["eval_grid"],
        elm_width=run["elm_width"],
        log=lambda msg: print(msg, flush=True),
    )
    eval_n = run["eval_grid"] or (4096 if problem.dim == 1 else 128)

    t0 = time.perf_counter()
    status = "completed"
    try:
        result = run_multilevel(problem, cfg["levels"], options)
    except MultilevelError as err:
        result = err.partial
        status = f"aborted: {err}"
        print(f"error: {err}", file=sys.stderr, flush=True)
    total_wall = time.perf_counter() - t0

    for i, record in enumerate(result.records):
        _write_history(out / f"history_{i}.csv", record)
    _write_solution(out / "solution.csv", problem, result.composite, eval_n)

    mu_prod = 1.0
    level_rows = []
    for i, level in enumerate(result.composite.levels):
        mu_prod *= level.mu
        estimate = result.scales[i]
        metrics = result.metrics[i]
        level_rows.append(
            {
                "mu": level.mu,
                "mu_source": "pinned" if estimate is None else "elm",
                "elm": None
                if estimate is None
                else {
                    "amplitude": estimate.amplitude,
                    "condition": estimate.condition,
                    "converged": estimate.converged,
                },
                "final_loss": result.final_losses[i],
                "final_loss_unscaled": result.final_losses[i] / mu_prod**2,
                "stop_reason": result.records[i].stop_reason,
                "wall_time_s": result.wall_times[i],
                "l2": metrics.l2,
                "h1": metrics.h1,
                "max_abs": metrics.max_abs,
            }
        )
    summary = {
        "version": __version__,
        "status": status,
        "config": cfg["echo"],
        "levels": level_rows,
        "total_wall_time_s": total_wall,
    }
    with (out / "summary.json").open("w") as fh:
        json.dump(summary, fh, indent=2)
        fh.write("\n")
    print(f"outputs written to {out}", flush=True)
    return 0 if status == "completed" else 1


def grad_check(seeds: int = 5, tolerance: float = 1e-6, flip_tanh_dd: bool = False) -> int:
    """Compare analytic and finite-difference gradients across the whole grid
    of architectures and problems; print the worst relative deviation."""
    import numpy as np

    from . import autodiff
    from .autodiff import finite_diff_gradient, loss_and_gradient
    from .model import FOURIER_G, FOURIER_SINE, PLAIN_G, NetworkSpec, xavier_init
    from .problems import convection_diffusion, helmholtz1d, interior_grid, poisson1d, poisson2d

    if flip_tanh_dd:
        autodiff.TANH_DD_SIGN = -1.0
        print("tanh second derivative sign FLIPPED (self-test mode)")
    problems = [poisson1d(2), convection_diffusion(0.01), helmholtz1d(9200.0), poisson2d()]
    worst = 0.0
    failed = False
    try:
        for problem in problems:
            grid = interior_grid(problem.dim, 16 if problem.dim == 1 else 5)
            for arch in (PLAIN_G, FOURIER_G, FOURIER_SINE):
                m = 0 if arch == PLAIN_G else 3
                spec = NetworkSpec(problem.dim, (4, 3), num_wavenumbers=m, architecture=arch)
                case_worst = 0.0
                for seed in range(seeds):
                    params = xavier_init(spec, seed)
                    report = loss_and_gradient(
                        problem, problem.source, 1.0, spec, params, grid, lift=problem.lift
                    )
                    fd = finite_diff_gradient(
                        lambda p: loss_and_gradient(
                            problem, problem.source, 1.0, spec, p, grid, lift=problem.lift
                        ).loss,
                        params,
                    )
                    dev = np.max(np.abs(report.gradient - fd)) / (
                        1.0 + np.max(np.abs(report.gradient))
                    )
                    case_worst = max(case_worst, dev)
                worst = max(worst, case_worst)
                ok = case_worst <= tolerance
                failed = failed or not ok
                print(
                    f"{problem.label:12s} {arch:12s} max rel dev {case_worst:.3e} "
                    f"{'ok' if ok else 'FAIL'}"
                )
    finally:
        autodiff.TANH_DD_SIGN = 1.0
    print(f"max relative deviation: {worst:.3e} (tolerance {tolerance:g})")
    if failed:
        print("gradient check FAILED", file=sys.stderr)
        return 1
    print("gradient check passed")
    return 0


def report(run_dir: str) -> int:
    """Merge per-level histories into report.csv with a cumulative iteration axis."""
    run = Path(run_dir)
    summary_path = run / "summary.json"
    if not summary_path.is_file():
        print(f"error: {run} does not contain summary.json", file=sys.stderr)
        return 1
    with summary_path.open() as fh:
        summary = json.load(fh)
    level_cfgs = summary.get("config", {}).get("levels", [])
    histories = sorted(run.glob("history_*.csv"), key=lambda p: int(p.stem.split("_")[1]))
    if not histories:
        print(f"error: {run} contains no history files", file=sys.stderr)
        return 1

    rows_out = []
    offset = 0
    for i, path in enumerate(histories):
        with path.open(newline="") as fh:
            rows = list(csv.DictReader(fh))
        for row in rows:
            rows_out.append(
                [
                    i,
                    offset + int(row["iteration"]),
                    row["phase"],
                    row["loss"],
                    row["l2"],
                    row["h1"],
                ]
            )
        if i < len(level_cfgs):
            offset += level_cfgs[i]["adam_iterations"] + level_cfgs[i]["lbfgs_iterations"]
        elif rows:
            offset += int(rows[-1]["iteration"])
    report_path = run / "report.csv"
    with report_path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["level", "iteration", "phase", "loss", "l2", "h1"])
        writer.writerows(rows_out)

    stub = run / "plot_stub.txt"
    stub.write_text(
        "# Plotting stub for this run (bring your own plotting tool).\n"
        "# report.csv columns: level, iteration, phase, loss, l2, h1\n"
        "#   - loss curve: plot iteration vs loss, log-scale y, one style per level\n"
        "#   - error curves: iteration vs l2 / h1 (blank cells mean not measured)\n"
        "#   - per-level regions: iteration ranges are contiguous blocks per level\n"
        "# solution.csv columns: coordinates, exact, approx, error\n"
    )
    print(f"wrote {report_path} ({len(rows_out)} rows) and {stub}")
    for i, row in enumerate(summary.get("levels", [])):
        print(
            f"level {i}: mu {row['mu']:.6e} loss {row['final_loss']:.3e} "
            f"L2 {row['l2']:.3e} H1 {row['h1']:.3e} max {row['max_abs']:.3e}"
        )
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="mlbvp", description="Multi-level network solver for boundary-value problems"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run an experiment config")
    p_run.add_argument("config", help="path to a .cfg experiment file")
    p_run.add_argument("--out", help="output directory (default: $MLBVP_OUTPUT_ROOT/<config stem>)")
    p_run.add_argument("--threads", type=int, help="cap BLAS/OpenMP thread pools")

    p_grad = sub.add_parser("grad-check", help="finite-difference gradient gate")
    p_grad.add_argument("--seeds", type=int, default=5, help="random seeds per case (default 5)")
    p_grad.add_argument("--tolerance", type=float, default=1e-6)
    p_grad.add_argument(
        "--flip-tanh-dd",
        action="store_true",
        help="self-test: corrupt the tanh second derivative; the gate must fail",
    )
    p_grad.add_argument("--threads", type=int, help="cap BLAS/OpenMP thread pools")

    p_rep = sub.add_parser("report", help="merge run histories into report.csv")
    p_rep.add_argument("run_dir", help="directory written by 'mlbvp run'")

    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            _limit_threads(args.threads)
            return run_experiment(args.config, args.out)
        if args.command == "grad-check":
            _limit_threads(args.threads)
            return grad_check(args.seeds, args.tolerance, args.flip_tanh_dd)
        return report(args.run_dir)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
