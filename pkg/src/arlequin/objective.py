"""Misfit objective, coefficient optimization and existence-condition checks.

The objective measures how far the coarse component of the coupled solution
is from the linear reference field over D and Dc.  The scalar search uses a
safeguarded Newton iteration on the analytic derivative (with a plain Brent
fallback available); the matrix search is a projected descent with central
finite-difference gradients, constrained to the SPD box by eigenvalue
clipping.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse.linalg as spla

from . import geometry as geo
from .errors import InfeasibleBounds, NoDescent, NonPositiveIterate
from .fem import grad_dot, misfit_dot, misfit_energy
from .solver import CoupledProblem, auxiliary_degenerate_fields


@dataclass
class ObjectiveEval:
    """Objective value (and optional scalar derivatives) at one coefficient."""

    kbar: np.ndarray
    J: float
    dJ: float | None = None
    d2J: float | None = None
    residual: float = 0.0
    constraint_residual: float = 0.0


@dataclass
class ConditionReport:
    """Empirical check of the two existence conditions of the scalar search.

    ``best_J`` is the best objective value found (an upper bound on the true
    infimum, so the comparisons are empirical, not certificates).
    """

    best_J: float
    rhs1: float  # misfit of the multiplier-free auxiliary field
    rhs2: float  # degenerate-coefficient objective floor
    area_dc: float
    condition1: bool
    condition2: bool

    CSV_COLUMNS = "best_J,rhs1,rhs2,area_dc,condition1,condition2"

    def to_csv_row(self) -> str:
        return (
            f"{self.best_J:.17g},{self.rhs1:.17g},{self.rhs2:.17g},"
            f"{self.area_dc:.17g},{int(self.condition1)},{int(self.condition2)}"
        )


@dataclass
class OptimizationTrace:
    """Iterates and outcome of one coefficient search."""

    mode: str
    iterates: list = field(default_factory=list)  # (kbar, J, dJ or None)
    kbar_opt: np.ndarray | None = None
    J_opt: float | None = None
    evaluations: int = 0
    termination: str = ""
    wall_time: float = 0.0

    CSV_COLUMNS = "eval,k11,k22,k12,J,dJ"

    def to_csv_rows(self) -> list[str]:
        rows = []
        for i, (k, j, dj) in enumerate(self.iterates):
            k = np.atleast_2d(k)
            if k.shape == (1, 1):
                k = float(k[0, 0]) * np.eye(2)
            dj_s = "" if dj is None else f"{dj:.17g}"
            rows.append(
                f"{i},{k[0, 0]:.17g},{k[1, 1]:.17g},{k[0, 1]:.17g},{j:.17g},{dj_s}"
            )
        return rows


def eval_J(problem: CoupledProblem, kbar, derivatives: int = 0) -> ObjectiveEval:
    """Evaluate the misfit objective, optionally with analytic dJ and d2J.

    Derivatives are available in scalar mode only; they reuse the KKT
    factorization of the base solve, so an evaluation with derivatives costs
    one factorization plus two triangular solves.
    """
    sol = problem.solve(kbar)
    j = misfit_energy(problem.coarse, sol.u_bar, problem.bc_direction)
    out = ObjectiveEval(
        kbar=sol.kbar, J=j,
        residual=sol.residual, constraint_residual=sol.constraint_residual,
    )
    if derivatives >= 1:
        d1 = problem.solve_derivative(sol, 1)
        out.dJ = 2.0 * misfit_dot(problem.coarse, sol.u_bar, d1.u_bar, problem.bc_direction)
        if derivatives >= 2:
            d2 = problem._derivative_from(sol, d1.u_bar, 2.0, 2)
            out.d2J = (
                2.0 * misfit_dot(problem.coarse, sol.u_bar, d2.u_bar, problem.bc_direction)
                + 2.0 * grad_dot(problem.coarse, d1.u_bar, d1.u_bar)
            )
    return out


@dataclass(frozen=True)
class ScalarOptions:
    tol_grad: float = 1e-8
    tol_step: float = 1e-8
    max_evals: int = 200
    bracket_growth: float = 2.0


def optimize_scalar(
    problem: CoupledProblem,
    init: float,
    method: str = "newton_safeguarded",
    options: ScalarOptions | None = None,
) -> OptimizationTrace:
    """Minimize the objective over scalar coefficients kbar > 0.

    ``newton_safeguarded`` runs Newton on the analytic derivative inside a
    sign-changing bracket with bisection fallback; ``brent`` is a
    derivative-free parabolic/golden search on the objective alone.  If no
    descent from the initial bracket is possible, raises NoDescent carrying
    the existence-condition report.
    """
    opts = options or ScalarOptions()
    if init <= 0:
        raise NonPositiveIterate(f"initial scalar coefficient must be positive, got {init}")
    if method not in ("newton_safeguarded", "brent"):
        raise ValueError(f"unknown scalar method {method!r}")

    trace = OptimizationTrace(mode="scalar")
    t0 = time.perf_counter()

    def fun_newton(k: float):
        ev = eval_J(problem, k, derivatives=2)
        trace.iterates.append((np.asarray(ev.kbar), ev.J, ev.dJ))
        trace.evaluations += 1
        return ev.J, ev.dJ, ev.d2J

    def fun_plain(k: float):
        ev = eval_J(problem, k)
        trace.iterates.append((np.asarray(ev.kbar), ev.J, None))
        trace.evaluations += 1
        return ev.J

    try:
        if method == "newton_safeguarded":
            k_opt, j_opt, reason = _newton_safeguarded(fun_newton, init, opts)
        else:
            k_opt, j_opt, reason = _brent_descent(fun_plain, init, opts)
    except NoDescent as exc:
        best = min((j for _, j, _ in trace.iterates), default=np.inf)
        exc.condition_report = check_conditions(problem, best)
        raise

    trace.kbar_opt = np.asarray(k_opt * np.eye(2))
    trace.J_opt = j_opt
    trace.termination = reason
    trace.wall_time = time.perf_counter() - t0
    return trace


def _newton_safeguarded(fun, init, opts: ScalarOptions):
    """Newton on dJ inside a bracket with sign change, bisection fallback."""
    evals = {"n": 0}
    best = {"k": None, "j": np.inf}

    def f(k):
        if evals["n"] >= opts.max_evals:
            raise _EvalBudget()
        evals["n"] += 1
        j, dj, d2j = fun(k)
        if j < best["j"]:
            best["k"], best["j"] = k, j
        return j, dj, d2j

    try:
        j0, dj0, d2j0 = f(init)

        # grow a bracket [lo, hi] with dJ(lo) < 0 < dJ(hi)
        lo = hi = init
        f_lo = f_hi = (j0, dj0, d2j0)
        growth = opts.bracket_growth
        while f_lo[1] > 0:
            hi, f_hi = lo, f_lo
            new = lo / growth
            if new < 1e-14:
                raise NoDescent("derivative stays positive down to the zero-coefficient limit")
            lo = new
            f_lo = f(lo)
        while f_hi[1] < 0:
            lo, f_lo = hi, f_hi
            hi = hi * growth
            if hi > 1e14:
                raise NoDescent("derivative stays negative; no interior minimizer found")
            f_hi = f(hi)

        k, (j, dj, d2j) = (lo, f_lo) if abs(f_lo[1]) < abs(f_hi[1]) else (hi, f_hi)
        while True:
            if abs(dj) <= opts.tol_grad * max(1.0, j):
                return k, j, "gradient tolerance"
            if hi - lo <= opts.tol_step * max(1.0, k):
                return k, j, "bracket width tolerance"
            k_new = k - dj / d2j if (d2j is not None and d2j > 0) else 0.5 * (lo + hi)
            if not (lo < k_new < hi):
                k_new = 0.5 * (lo + hi)
            j, dj, d2j = f(k_new)
            k = k_new
            if dj < 0:
                lo = k
            else:
                hi = k
    except _EvalBudget:
        return best["k"], best["j"], "max evaluations"


_GOLDEN = 0.381966011250105


def _brent_descent(fun, init, opts: ScalarOptions):
    """Bracket the minimum geometrically, then Brent parabolic/golden search."""
    evals = {"n": 0}
    best = {"k": None, "j": np.inf}

    def f(k):
        if evals["n"] >= opts.max_evals:
            raise _EvalBudget()
        evals["n"] += 1
        j = fun(k)
        if j < best["j"]:
            best["k"], best["j"] = k, j
        return j

    try:
        return _brent_core(f, init, opts)
    except _EvalBudget:
        return best["k"], best["j"], "max evaluations"


def _brent_core(f, init, opts: ScalarOptions):
    growth = opts.bracket_growth
    k_mid, j_mid = init, f(init)
    k_lo, j_lo = init / growth, f(init / growth)
    k_hi, j_hi = init * growth, f(init * growth)
    while not (j_mid <= j_lo and j_mid <= j_hi):
        if j_lo < j_mid:
            k_hi, j_hi = k_mid, j_mid
            k_mid, j_mid = k_lo, j_lo
            k_lo = k_lo / growth
            if k_lo < 1e-14:
                raise NoDescent("objective decreases down to the zero-coefficient limit")
            j_lo = f(k_lo)
        else:
            k_lo, j_lo = k_mid, j_mid
            k_mid, j_mid = k_hi, j_hi
            k_hi = k_hi * growth
            if k_hi > 1e14:
                raise NoDescent("objective decreases without bound in the coefficient")
            j_hi = f(k_hi)

    a, b = k_lo, k_hi
    x = w = v = k_mid
    fx = fw = fv = j_mid
    d = e = 0.0
    while True:
        mid = 0.5 * (a + b)
        tol1 = opts.tol_step * max(1.0, abs(x))
        tol2 = 2.0 * tol1
        if abs(x - mid) <= tol2 - 0.5 * (b - a):
            return x, fx, "bracket width tolerance"
        use_golden = True
        if abs(e) > tol1:
            r = (x - w) * (fx - fv)
            q = (x - v) * (fx - fw)
            p = (x - v) * q - (x - w) * r
            q = 2.0 * (q - r)
            if q > 0:
                p = -p
            q = abs(q)
            e_old, e = e, d
            if abs(p) < abs(0.5 * q * e_old) and q * (a - x) < p < q * (b - x):
                d = p / q
                u = x + d
                if (u - a) < tol2 or (b - u) < tol2:
                    d = tol1 if x < mid else -tol1
                use_golden = False
        if use_golden:
            e = (b - x) if x < mid else (a - x)
            d = _GOLDEN * e
        u = x + d if abs(d) >= tol1 else x + (tol1 if d > 0 else -tol1)
        fu = f(u)
        if fu <= fx:
            if u >= x:
                a = x
            else:
                b = x
            v, w, x = w, x, u
            fv, fw, fx = fw, fx, fu
        else:
            if u < x:
                a = u
            else:
                b = u
            if fu <= fw or w == x:
                v, w = w, u
                fv, fw = fw, fu
            elif fu <= fv or v == x or v == w:
                v, fv = u, fu


@dataclass(frozen=True)
class MatrixOptions:
    tol_grad: float = 1e-8
    tol_step: float = 1e-8
    max_evals: int = 200
    fd_step: float = 1e-4
    armijo: float = 1e-4


def project_spd_box(k: np.ndarray, c_minus: float, c_plus: float) -> np.ndarray:
    """Clip the eigenvalues of a symmetric matrix into [c_minus, c_plus]."""
    k = 0.5 * (k + k.T)
    vals, vecs = np.linalg.eigh(k)
    vals = np.clip(vals, c_minus, c_plus)
    return (vecs * vals) @ vecs.T


def optimize_matrix(
    problem: CoupledProblem,
    bounds: tuple[float, float],
    init=None,
    options: MatrixOptions | None = None,
) -> OptimizationTrace:
    """Projected-descent search over symmetric matrices with bounded spectrum.

    Parameterizes by (k11, k22, k12), takes central finite-difference
    gradients, and projects every iterate back into the SPD box by eigenvalue
    clipping.  Only the column of the optimum along the boundary-condition
    direction is meaningful for identification.
    """
    c_minus, c_plus = bounds
    if not (0 < c_minus < c_plus):
        raise InfeasibleBounds(f"need 0 < c_minus < c_plus, got {bounds}")
    opts = options or MatrixOptions()

    if init is None:
        k0 = 0.5 * (c_minus + c_plus) * np.eye(2)
    else:
        k0 = np.asarray(init, dtype=float)
        if k0.ndim == 0:
            k0 = float(k0) * np.eye(2)
    k0 = project_spd_box(k0, c_minus, c_plus)

    trace = OptimizationTrace(mode="matrix")
    t0 = time.perf_counter()

    def theta_to_k(theta):
        return np.array([[theta[0], theta[2]], [theta[2], theta[1]]])

    def j_of(theta, record=False):
        if trace.evaluations >= opts.max_evals:
            raise _EvalBudget()
        k = project_spd_box(theta_to_k(theta), c_minus, c_plus)
        ev = eval_J(problem, k)
        trace.evaluations += 1
        if record:
            trace.iterates.append((k, ev.J, None))
        return ev.J

    theta = np.array([k0[0, 0], k0[1, 1], k0[0, 1]])
    reason = "max evaluations"
    j_cur = np.inf
    prev_theta = prev_grad = None
    try:
        j_cur = j_of(theta, record=True)
        step = 1.0
        while True:
            grad = np.zeros(3)
            for i in range(3):
                d = opts.fd_step * max(1.0, abs(theta[i]))
                ei = np.zeros(3)
                ei[i] = d
                grad[i] = (j_of(theta + ei) - j_of(theta - ei)) / (2.0 * d)
            gnorm = np.linalg.norm(grad)
            if gnorm <= opts.tol_grad * max(1.0, j_cur):
                reason = "gradient tolerance"
                break

            # spectral (Barzilai-Borwein) step when history is available
            if prev_theta is not None:
                s = theta - prev_theta
                y = grad - prev_grad
                sy = s @ y
                if sy > 0:
                    step = min(max((s @ s) / sy, 1e-8), 1e6)
            prev_theta, prev_grad = theta.copy(), grad.copy()

            accepted = False
            t = step
            for _ in range(25):
                k_trial = project_spd_box(theta_to_k(theta - t * grad), c_minus, c_plus)
                theta_trial = np.array([k_trial[0, 0], k_trial[1, 1], k_trial[0, 1]])
                move = np.linalg.norm(theta_trial - theta)
                if move <= opts.tol_step * max(1.0, np.linalg.norm(theta)):
                    break
                j_trial = j_of(theta_trial)
                if j_trial <= j_cur - opts.armijo * t * gnorm**2:
                    accepted = True
                    break
                t *= 0.5
            if not accepted:
                reason = "step tolerance"
                break
            theta = theta_trial
            j_cur = j_trial
            trace.iterates.append((theta_to_k(theta), j_cur, None))
            step = t
    except _EvalBudget:
        reason = "max evaluations"

    k_opt = project_spd_box(theta_to_k(theta), c_minus, c_plus)
    trace.kbar_opt = k_opt
    trace.J_opt = j_cur
    trace.termination = reason
    trace.wall_time = time.perf_counter() - t0
    return trace


class _EvalBudget(Exception):
    pass


def check_conditions(problem: CoupledProblem, best_J: float) -> ConditionReport:
    """Assemble the two existence conditions against the best objective found.

    ``rhs1`` is the misfit of the multiplier-free auxiliary field (the value
    the objective would take if the coefficient escaped to infinity); ``rhs2``
    is the objective floor over the degenerate zero-coefficient family, which
    is bounded below by the gluing-zone area.
    """
    coarse = problem.coarse
    dir_ = problem.bc_direction

    # auxiliary field of the runaway-coefficient case: half-weighted unit form
    free = coarse.free_nodes
    a1 = problem.A1
    u0 = coarse.lift(dir_)
    lu_rhs = -(a1[free] @ u0)
    sol = spla.splu(a1[free][:, free].tocsc(), permc_spec="COLAMD").solve(lu_rhs)
    u_tilde = u0.copy()
    u_tilde[free] += sol
    rhs1 = misfit_energy(coarse, u_tilde, dir_)

    _, _, quads = auxiliary_degenerate_fields(coarse, dir_)
    area_dc = problem.coarse_mesh.region_area(geo.REGION_DC)
    cross2 = quads["cross_ab"] ** 2 / quads["norm_b"] if quads["norm_b"] > 0 else 0.0
    rhs2 = area_dc + quads["misfit_a"] - cross2

    return ConditionReport(
        best_J=best_J, rhs1=rhs1, rhs2=rhs2, area_dc=area_dc,
        condition1=bool(best_J < rhs1), condition2=bool(best_J < rhs2),
    )


def convexity_probe(problem: CoupledProblem, window: tuple[float, float], n: int = 9):
    """Sample J, dJ and d2J across a window of scalar coefficients.

    Returns the sample table plus the curvature sign at the sampled minimum,
    the practical uniqueness diagnostic for the scalar search.
    """
    lo, hi = window
    if not (0 < lo < hi):
        raise NonPositiveIterate(f"window must satisfy 0 < lo < hi, got {window}")
    ks = np.linspace(lo, hi, n)
    rows = []
    for k in ks:
        ev = eval_J(problem, float(k), derivatives=2)
        rows.append((float(k), ev.J, ev.dJ, ev.d2J))
    j_vals = [r[1] for r in rows]
    i_min = int(np.argmin(j_vals))
    return {
        "samples": rows,
        "min_k": rows[i_min][0],
        "convex_at_min": rows[i_min][3] > 0,
    }
