"""Sweep runner, result persistence and convergence reporting.

One sweep runs the coefficient identification once per eps value against a
single oracle solve, collects one ResultRow per eps, and writes an
append-friendly CSV plus a JSON run manifest.  Numeric results are fully
deterministic; wall-clock timings are kept out of the CSV and stored in the
manifest so repeated runs produce byte-identical result files.
"""

from __future__ import annotations

import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import geometry as geo
from .config import StudyConfig
from .objective import (
    MatrixOptions,
    ScalarOptions,
    check_conditions,
    optimize_matrix,
    optimize_scalar,
)
from .oracle import richardson_tensor
from .solver import CoupledProblem

RESULT_COLUMNS = (
    "config_hash,eps,H,h,status,under_resolved,k11,k22,k12,J_final,"
    "oracle_k11,oracle_k22,oracle_k12,error,rel_error,condition1,condition2,"
    "iterations,message"
)


@dataclass
class ResultRow:
    """One sweep row: identification outcome at a single eps."""

    config_hash: str
    eps: float
    H: float
    h: float
    status: str = "ok"
    under_resolved: bool = False
    kbar_opt: np.ndarray | None = None
    J_final: float | None = None
    oracle: np.ndarray | None = None
    error: float | None = None
    rel_error: float | None = None
    condition1: bool | None = None
    condition2: bool | None = None
    iterations: int = 0
    message: str = ""
    wall_time: float = 0.0

    def to_csv(self) -> str:
        def num(x, fmt="%.17g"):
            return "" if x is None else fmt % x

        k = self.kbar_opt
        o = self.oracle
        flags = [
            "" if self.condition1 is None else str(int(self.condition1)),
            "" if self.condition2 is None else str(int(self.condition2)),
        ]
        parts = [
            self.config_hash,
            num(self.eps), num(self.H), num(self.h),
            self.status, str(int(self.under_resolved)),
            num(None if k is None else k[0, 0]),
            num(None if k is None else k[1, 1]),
            num(None if k is None else k[0, 1]),
            num(self.J_final),
            num(None if o is None else o[0, 0]),
            num(None if o is None else o[1, 1]),
            num(None if o is None else o[0, 1]),
            num(self.error), num(self.rel_error),
            flags[0], flags[1],
            str(self.iterations),
            self.message.replace(",", ";").replace("\n", " "),
        ]
        return ",".join(parts)


def _scalar_target(oracle: np.ndarray, direction: int) -> float:
    return float(oracle[direction - 1, direction - 1])


def run_row(config: StudyConfig, eps: float, oracle: np.ndarray, meshes) -> ResultRow:
    """Run one (eps) identification against a precomputed oracle tensor."""
    row = ResultRow(
        config_hash=config.config_hash(), eps=eps, H=config.H, h=config.h,
        under_resolved=config.under_resolved(eps),
    )
    t0 = time.perf_counter()
    try:
        field_ = config.field()
        problem = CoupledProblem(
            config.geometry, config.H, config.refine_ratio, field_, eps,
            bc_direction=config.bc_direction, mode=config.optimizer.mode,
            meshes=meshes,
        )
        opt = config.optimizer
        if opt.mode == "scalar":
            trace = optimize_scalar(
                problem, opt.init, method=opt.method,
                options=ScalarOptions(tol_grad=opt.tol_grad, tol_step=opt.tol_step,
                                      max_evals=opt.max_evals),
            )
            target = _scalar_target(oracle, config.bc_direction)
            value = float(trace.kbar_opt[0, 0])
            row.error = abs(value - target)
            row.rel_error = row.error / abs(target) if target else None
        else:
            trace = optimize_matrix(
                problem, opt.bounds,
                init=opt.init,
                options=MatrixOptions(tol_grad=opt.tol_grad, tol_step=opt.tol_step,
                                      max_evals=opt.max_evals),
            )
            j = config.bc_direction - 1
            col_err = np.linalg.norm(trace.kbar_opt[:, j] - oracle[:, j])
            row.error = float(col_err)
            scale = np.linalg.norm(oracle[:, j])
            row.rel_error = float(col_err / scale) if scale else None
        row.kbar_opt = trace.kbar_opt
        row.J_final = trace.J_opt
        row.oracle = oracle
        row.iterations = trace.evaluations
        report = check_conditions(problem, trace.J_opt)
        row.condition1 = report.condition1
        row.condition2 = report.condition2
    except Exception as exc:  # per-row failures never abort the sweep
        row.status = "failed"
        row.message = f"{type(exc).__name__}: {exc}"
    row.wall_time = time.perf_counter() - t0
    return row


def run_sweep(config: StudyConfig, workers: int = 1, verbose: bool = False) -> list[ResultRow]:
    """Run the full eps sweep; rows are returned sorted by eps descending.

    The oracle tensor is computed once; rows are independent and may execute
    on a bounded worker pool without affecting results or ordering.
    """
    oracle = richardson_tensor(config.field(), config.oracle_resolutions).kstar
    eps_sorted = sorted(config.eps_values, reverse=True)
    meshes = geo.build_domain(config.geometry, config.H, config.refine_ratio)

    if verbose:
        print(f"oracle k* = {oracle.tolist()}")

    if workers <= 1:
        rows = [run_row(config, e, oracle, meshes) for e in eps_sorted]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(lambda e: run_row(config, e, oracle, meshes), eps_sorted))
    if verbose:
        for r in rows:
            print(f"eps={r.eps}: status={r.status} error={r.error} [{r.wall_time:.1f}s]")
    return rows


def write_rows_csv(rows: list[ResultRow], stream) -> None:
    stream.write(RESULT_COLUMNS + "\n")
    for row in rows:
        stream.write(row.to_csv() + "\n")


def write_manifest(config: StudyConfig, rows: list[ResultRow], stream) -> None:
    """Run manifest: config echo, library version and per-row timings."""
    from . import __version__

    payload = {
        "version": __version__,
        "config": config.canonical_dict(),
        "config_hash": config.config_hash(),
        "timings": [{"eps": r.eps, "wall_time_s": r.wall_time} for r in rows],
    }
    json.dump(payload, stream, indent=2, sort_keys=True)
    stream.write("\n")


@dataclass
class Report:
    """Convergence report over a set of result rows."""

    rows: list
    slope: float | None = None
    lines: list[str] = field(default_factory=list)

    def text(self) -> str:
        return "\n".join(self.lines) + "\n"


def _loglog_slope(eps: list[float], err: list[float]) -> float | None:
    pairs = [(e, x) for e, x in zip(eps, err) if x is not None and x > 0]
    if len(pairs) < 2:
        return None
    le = np.log([p[0] for p in pairs])
    lx = np.log([p[1] for p in pairs])
    a = np.vstack([le, np.ones_like(le)]).T
    slope, _ = np.linalg.lstsq(a, lx, rcond=None)[0]
    return float(slope)


def make_report(rows: list[ResultRow]) -> Report:
    """Error-vs-eps table, empirical order and condition-flag summary."""
    if not rows:
        raise ValueError("report needs at least one row")
    ok = [r for r in rows if r.status == "ok"]
    failed = [r for r in rows if r.status != "ok"]
    slope = _loglog_slope([r.eps for r in ok], [r.error for r in ok])

    lines = ["eps        error          rel_error      J_final        cond1 cond2 flags"]
    for r in sorted(rows, key=lambda r: -r.eps):
        if r.status != "ok":
            lines.append(f"{r.eps:<10.6g} FAILED: {r.message}")
            continue
        flags = "under-resolved" if r.under_resolved else ""
        c1 = "-" if r.condition1 is None else str(int(r.condition1))
        c2 = "-" if r.condition2 is None else str(int(r.condition2))
        lines.append(
            f"{r.eps:<10.6g} {r.error:<14.6e} {r.rel_error:<14.6e} "
            f"{r.J_final:<14.6e} {c1:<5} {c2:<5} {flags}"
        )
    lines.append(f"empirical order (log-log slope): {'' if slope is None else f'{slope:.3f}'}")
    if failed:
        lines.append(f"failed rows: {len(failed)}")
    return Report(rows=rows, slope=slope, lines=lines)


def plot_script(rows: list[ResultRow]) -> str:
    """Small standalone matplotlib script for the error-vs-eps curve."""
    ok = [r for r in rows if r.status == "ok" and r.error]
    eps = [r.eps for r in ok]
    err = [r.error for r in ok]
    return (
        "#!/usr/bin/env python3\n"
        "import matplotlib.pyplot as plt\n"
        f"eps = {eps!r}\n"
        f"err = {err!r}\n"
        "plt.loglog(eps, err, 'o-')\n"
        "plt.xlabel('eps')\n"
        "plt.ylabel('|k_opt - k*|')\n"
        "plt.grid(True, which='both')\n"
        "plt.savefig('convergence.png', dpi=150)\n"
    )
