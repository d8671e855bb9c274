"""Command-line front end: ``sparse-ddp {solve,sweep,timing,check} --config FILE``.

Exit codes: 0 success, 1 config error, 2 solve finished without converging
(files are still written), 3 derivative check failed.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import logging
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import analysis
from .config import ConfigError, ProblemConfig, SweepConfig, TimingConfig, load_config, shipped_config
from .problems import build_problem
from .solver import solve

OUT_ENV = "SPARSE_DDP_OUT"

EXIT_OK, EXIT_CONFIG, EXIT_NOT_CONVERGED, EXIT_CHECK_FAILED = 0, 1, 2, 3

log = logging.getLogger("sparse_ddp")


def fmt(value):
    """17 significant digits for floats; everything else via ``str``."""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return "%.17g" % value
    return str(value)


def write_atomic(path: Path, text: str):
    """Write via a temp file in the same directory and rename over the target."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def csv_text(header, rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([fmt(v) for v in row])
    return buf.getvalue()


def _json_safe(obj):
    if isinstance(obj, dict):
        return {str(k): _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _json_safe(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    return obj


def write_json(path, obj):
    write_atomic(path, json.dumps(_json_safe(obj), indent=2) + "\n")


def resolve_config(arg) -> Path:
    path = Path(arg)
    if path.exists() or path.suffix or os.sep in str(arg):
        return path
    return shipped_config(arg)


def output_dir(args, cfg: ProblemConfig) -> Path:
    if args.out:
        return Path(args.out)
    if os.environ.get(OUT_ENV):
        return Path(os.environ[OUT_ENV])
    return Path(cfg.output_dir)


def _float_list(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _name_list(text):
    return [v.strip() for v in text.split(",") if v.strip()]


# --------------------------------------------------------------------------- commands

def write_trajectory(out: Path, problem, result):
    model = problem.model
    traj = result.trajectory
    times = traj.times
    state_rows = [[t, times[t], *traj.X[t]] for t in range(len(traj.X))]
    control_rows = [[t, times[t], *traj.U[t]] for t in range(len(traj.U))]
    write_atomic(out / "states.csv", csv_text(["knot", "time", *model.state_names], state_rows))
    write_atomic(out / "controls.csv", csv_text(["knot", "time", *model.control_names], control_rows))


def cmd_solve(args, cfg: ProblemConfig) -> int:
    problem = build_problem(cfg)
    result = solve(problem, config=cfg.solver)
    report = analysis.report_for(problem, result)
    out = output_dir(args, cfg)
    write_trajectory(out, problem, result)
    write_json(out / "sparsity_report.json", report.to_dict())
    summary = result.summary()
    summary["config"] = cfg.to_dict()
    write_json(out / "solve_result.json", summary)
    status = "converged" if result.converged else "did not converge"
    print(f"{status} after {result.iterations} iterations ({result.exit_reason}); "
          f"final task cost {result.cost.terminal:.6g}, zero controls {report.zero_count}/"
          f"{report.n_controls}; wrote {out}")
    return EXIT_OK if result.converged else EXIT_NOT_CONVERGED


def cmd_sweep(args, cfg: ProblemConfig) -> int:
    grid_cfg = cfg.sweep or SweepConfig()
    losses = args.losses or grid_cfg.losses
    betas = args.betas or grid_cfg.betas
    lambdas = args.lambdas or grid_cfg.lambdas
    solver_cfg = cfg.solver
    if grid_cfg.max_iterations is not None:
        solver_cfg = dataclasses.replace(solver_cfg, max_iterations=grid_cfg.max_iterations)
    problem = build_problem(cfg)
    grid = analysis.run_sweep(problem, losses, betas, lambdas, solver_cfg, jobs=args.jobs)
    out = output_dir(args, cfg)
    rows = [[row[c] for c in analysis.SWEEP_COLUMNS] for row in grid.rows()]
    write_atomic(out / "sweep.csv", csv_text(analysis.SWEEP_COLUMNS, rows))
    trends = {loss: grid.trend(loss) for loss in grid.losses}
    failures = [{"loss": c.loss, "beta": c.beta, "lambda": c.lam, "error": c.error}
                for c in grid.cells.values() if c.error]
    write_json(out / "sweep_summary.json",
               {"largest_beta": grid.betas[-1], "trend": trends, "failures": failures})
    for loss, t in trends.items():
        print(f"{loss}: at beta={grid.betas[-1]:g}, non-decreasing zero_count in "
              f"{t['zero_count']:.0%} and final_task_cost in {t['final_task_cost']:.0%} "
              f"of {t['pairs']} adjacent lambda pairs")
    print(f"{len(rows)} cells, {len(failures)} failed; wrote {out / 'sweep.csv'}")
    return EXIT_OK


def cmd_timing(args, cfg: ProblemConfig) -> int:
    timing_cfg = cfg.timing or TimingConfig()
    losses = args.losses or timing_cfg.losses
    lambdas = args.lambdas if args.lambdas is not None else timing_cfg.lambdas
    if not lambdas:
        raise ConfigError("lambda grid is empty", "timing.lambdas")
    problem = build_problem(cfg)
    report = analysis.timing_report(problem, losses, lambdas, cfg.solver)
    out = output_dir(args, cfg)
    write_json(out / "timing.json", {"beta": 1.0, "order": report["order"],
                                     "losses": {k: v.to_dict() for k, v in report["losses"].items()}})
    for loss in report["order"]:
        s = report["losses"][loss]
        print(f"{loss:<12} median {s.median_wall_s:8.3f} s  mean {s.mean_wall_s:8.3f} s  "
              f"median iterations {s.median_iterations:g}")
    return EXIT_OK


def cmd_check(args, cfg: ProblemConfig) -> int:
    report = analysis.check_derivatives(build_problem(cfg))
    print("\n".join(report.lines()))
    return EXIT_OK if report.passed else EXIT_CHECK_FAILED


COMMANDS = {"solve": cmd_solve, "sweep": cmd_sweep, "timing": cmd_timing, "check": cmd_check}


def build_parser():
    parser = argparse.ArgumentParser(prog="sparse-ddp", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log solver iterations")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True,
                       help="config file, or the name of a shipped config such as cartpole_l2")
        p.add_argument("--out", help=f"output directory (overrides ${OUT_ENV} and the config)")
        if name in ("sweep", "timing"):
            p.add_argument("--losses", type=_name_list, help="comma-separated loss kinds")
            p.add_argument("--lambdas", type=_float_list, help="comma-separated lambda values")
        if name == "sweep":
            p.add_argument("--betas", type=_float_list, help="comma-separated beta values")
            p.add_argument("--jobs", type=int, default=1, help="worker processes (default 1)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "jobs", 1) < 1:
        print("error: --jobs must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = load_config(resolve_config(args.config))
        return COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
