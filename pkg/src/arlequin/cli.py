"""Batch command-line interface.

Subcommands: oracle, solve, objective, optimize, sweep, check-conditions,
report.  Every run is driven by a JSON config file; outputs are CSV files
plus a JSON manifest.  Exit code 0 means every row succeeded and every
threshold configured under "thresholds" was met.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .config import StudyConfig, load_config
from .errors import ArlequinError
from .harness import (
    RESULT_COLUMNS,
    ResultRow,
    make_report,
    plot_script,
    run_sweep,
    write_manifest,
    write_rows_csv,
)
from .objective import check_conditions, convexity_probe, eval_J, optimize_matrix, optimize_scalar
from .objective import MatrixOptions, ScalarOptions
from .oracle import richardson_tensor
from .solver import CoupledProblem


def _build_problem(config: StudyConfig, eps: float) -> CoupledProblem:
    return CoupledProblem(
        config.geometry, config.H, config.refine_ratio, config.field(), eps,
        bc_direction=config.bc_direction, mode=config.optimizer.mode,
    )


def _cmd_oracle(config: StudyConfig, args, out: Path) -> int:
    tensor = richardson_tensor(config.field(), config.oracle_resolutions)
    k = tensor.kstar
    print("k11,k22,k12,resolutions,error_estimate")
    res = ";".join(str(n) for n in tensor.resolutions)
    est = "" if tensor.error_estimate is None else f"{tensor.error_estimate:.6e}"
    print(f"{k[0, 0]:.12g},{k[1, 1]:.12g},{k[0, 1]:.12g},{res},{est}")
    return 0


def _pick_eps(config: StudyConfig, args) -> float:
    if getattr(args, "eps", None) is not None:
        return float(args.eps)
    return min(config.eps_values)


def _pick_kbar(config: StudyConfig, args):
    if getattr(args, "kbar", None) is not None:
        vals = [float(v) for v in args.kbar.split(",")]
        if len(vals) == 1:
            return vals[0]
        if len(vals) == 3:
            return np.array([[vals[0], vals[2]], [vals[2], vals[1]]])
        raise ArlequinError("--kbar expects 'k' or 'k11,k22,k12'")
    return config.optimizer.init


def _cmd_solve(config: StudyConfig, args, out: Path) -> int:
    eps = _pick_eps(config, args)
    problem = _build_problem(config, eps)
    sol = problem.solve(_pick_kbar(config, args))
    path = out / "solution.csv"
    with path.open("w") as fh:
        sol.dump_csv(fh, problem)
    if args.verbose:
        print(f"residual={sol.residual:.3e} constraint={sol.constraint_residual:.3e}")
    print(f"wrote {path}")
    return 0


def _cmd_objective(config: StudyConfig, args, out: Path) -> int:
    eps = _pick_eps(config, args)
    problem = _build_problem(config, eps)
    want_der = 2 if config.optimizer.mode == "scalar" else 0
    ev = eval_J(problem, _pick_kbar(config, args), derivatives=want_der)
    print("k11,k22,k12,J,dJ,d2J")
    dj = "" if ev.dJ is None else f"{ev.dJ:.12g}"
    d2j = "" if ev.d2J is None else f"{ev.d2J:.12g}"
    print(f"{ev.kbar[0, 0]:.12g},{ev.kbar[1, 1]:.12g},{ev.kbar[0, 1]:.12g},{ev.J:.12g},{dj},{d2j}")
    return 0


def _cmd_optimize(config: StudyConfig, args, out: Path) -> int:
    eps = _pick_eps(config, args)
    problem = _build_problem(config, eps)
    opt = config.optimizer
    if opt.mode == "scalar":
        trace = optimize_scalar(
            problem, opt.init, method=opt.method,
            options=ScalarOptions(tol_grad=opt.tol_grad, tol_step=opt.tol_step,
                                  max_evals=opt.max_evals),
        )
    else:
        trace = optimize_matrix(
            problem, opt.bounds, init=opt.init,
            options=MatrixOptions(tol_grad=opt.tol_grad, tol_step=opt.tol_step,
                                  max_evals=opt.max_evals),
        )
    path = out / "trace.csv"
    with path.open("w") as fh:
        fh.write(trace.CSV_COLUMNS + "\n")
        for row in trace.to_csv_rows():
            fh.write(row + "\n")
    k = trace.kbar_opt
    print(f"k_opt = [[{k[0, 0]:.12g}, {k[0, 1]:.12g}], [{k[0, 1]:.12g}, {k[1, 1]:.12g}]] "
          f"J = {trace.J_opt:.6e} evals = {trace.evaluations} ({trace.termination})")
    print(f"wrote {path}")
    return 0


def _cmd_check_conditions(config: StudyConfig, args, out: Path) -> int:
    eps = _pick_eps(config, args)
    problem = _build_problem(config, eps)
    if args.best_j is not None:
        best = float(args.best_j)
    else:
        ev = eval_J(problem, config.optimizer.init)
        best = ev.J
    report = check_conditions(problem, best)
    print(report.CSV_COLUMNS)
    print(report.to_csv_row())
    return 0 if (report.condition1 and report.condition2) else 1


def _cmd_sweep(config: StudyConfig, args, out: Path) -> int:
    rows = run_sweep(config, workers=args.workers, verbose=args.verbose)
    csv_path = out / "results.csv"
    with csv_path.open("w") as fh:
        write_rows_csv(rows, fh)
    with (out / "manifest.json").open("w") as fh:
        write_manifest(config, rows, fh)
    print(f"wrote {csv_path}")
    report = make_report(rows)
    print(report.text(), end="")
    return _threshold_exit(config, rows)


def _threshold_exit(config: StudyConfig, rows: list[ResultRow]) -> int:
    if any(r.status != "ok" for r in rows):
        return 1
    th = config.thresholds
    if "max_rel_error" in th:
        worst = max((r.rel_error for r in rows if r.rel_error is not None), default=None)
        if worst is None or worst > float(th["max_rel_error"]):
            return 1
    if "max_final_J" in th:
        worst = max((r.J_final for r in rows if r.J_final is not None), default=None)
        if worst is None or worst > float(th["max_final_J"]):
            return 1
    return 0


def _cmd_report(config: StudyConfig, args, out: Path) -> int:
    src = Path(args.results) if args.results else out / "results.csv"
    rows = _read_rows(src)
    report = make_report(rows)
    print(report.text(), end="")
    script = out / "plot_convergence.py"
    script.write_text(plot_script(rows))
    print(f"wrote {script}")
    return 0


def _read_rows(path: Path) -> list[ResultRow]:
    lines = path.read_text().strip().splitlines()
    if not lines or lines[0] != RESULT_COLUMNS:
        raise ArlequinError(f"{path} is not a results CSV (unexpected header)")
    rows = []
    for line in lines[1:]:
        parts = line.split(",")
        (chash, eps, H, h, status, under, k11, k22, k12, jf,
         o11, o22, o12, err, rel, c1, c2, iters, msg) = parts
        row = ResultRow(
            config_hash=chash, eps=float(eps), H=float(H), h=float(h),
            status=status, under_resolved=bool(int(under)),
            iterations=int(iters), message=msg,
        )
        if k11:
            row.kbar_opt = np.array([[float(k11), float(k12)], [float(k12), float(k22)]])
        if o11:
            row.oracle = np.array([[float(o11), float(o12)], [float(o12), float(o22)]])
        row.J_final = float(jf) if jf else None
        row.error = float(err) if err else None
        row.rel_error = float(rel) if rel else None
        row.condition1 = bool(int(c1)) if c1 else None
        row.condition2 = bool(int(c2)) if c2 else None
        rows.append(row)
    return rows


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="arlequin",
        description="Homogenized-coefficient identification by coupled-model optimization",
    )
    parser.add_argument("--config", required=True, help="path to the JSON study config")
    parser.add_argument("--out", default=None, help="output directory (default: config output key)")
    parser.add_argument("--workers", type=int, default=1, help="sweep worker pool size")
    parser.add_argument("--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("oracle", help="print the reference homogenized tensor")
    p_solve = sub.add_parser("solve", help="one coupled solve, dump nodal CSV")
    p_obj = sub.add_parser("objective", help="evaluate the misfit objective")
    p_opt = sub.add_parser("optimize", help="run the coefficient search once")
    p_cond = sub.add_parser("check-conditions", help="existence-condition report")
    p_cond.add_argument("--best-j", type=float, default=None,
                        help="best objective value to compare against (else J at init)")
    sub.add_parser("sweep", help="run the full eps sweep")
    p_rep = sub.add_parser("report", help="convergence report from a results CSV")
    p_rep.add_argument("--results", default=None, help="results CSV (default: <out>/results.csv)")
    for p in (p_solve, p_obj, p_opt, p_cond):
        p.add_argument("--eps", type=float, default=None, help="override eps (default: smallest)")
    for p in (p_solve, p_obj):
        p.add_argument("--kbar", default=None, help="coefficient: 'k' or 'k11,k22,k12'")

    args = parser.parse_args(argv)
    try:
        config = load_config(args.config)
        out = Path(args.out) if args.out else Path(config.output)
        out.mkdir(parents=True, exist_ok=True)
        handler = {
            "oracle": _cmd_oracle,
            "solve": _cmd_solve,
            "objective": _cmd_objective,
            "optimize": _cmd_optimize,
            "check-conditions": _cmd_check_conditions,
            "sweep": _cmd_sweep,
            "report": _cmd_report,
        }[args.command]
        return handler(config, args, out)
    except ArlequinError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
