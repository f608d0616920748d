"""Assembly and direct solution of the enriched coupled saddle-point system.

One CoupledProblem instance fixes the geometry, the mesh pair, the
oscillatory coefficient and the boundary-condition direction; each solve then
only reassembles the (tiny) effective-model block for the requested constant
coefficient and refactorizes the full symmetric indefinite KKT matrix.
Differentiated systems reuse the factorization of the base solve.

Dof ordering is pinned: coarse interior, fine, multiplier (W_H then the
enrichment coefficients).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import IO

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import geometry as geo
from .coefficients import CoefficientField
from .enrichment import EnrichmentBasis, enriched_multiplier_basis
from .errors import NonSpdCoefficient, SingularKkt, SolverFailure
from .fem import (
    CoarseSpace,
    DcCoupling,
    FineSpace,
    _accumulate,
    assemble_A1,
    assemble_Abar,
    assemble_Acheck,
    check_spd,
    p1_integral,
    stiffness_local,
    tri_geometry,
)


@dataclass(frozen=True)
class SolverOptions:
    """Tolerance ladder for the direct KKT solves."""

    residual_tol: float = 1e-9
    pivot_threshold: float | None = None  # forwarded to SuperLU diag_pivot_thresh if set
    permc_spec: str = "COLAMD"


@dataclass
class CoupledSolution:
    """Solution triple of the coupled system plus solve diagnostics."""

    kbar: np.ndarray  # (2, 2)
    u_bar: np.ndarray  # coarse nodal values, Dirichlet trace included
    u_check: np.ndarray  # fine nodal values
    psi_wh: np.ndarray  # W_H part of the multiplier (coarse Dc dofs)
    psi_enrich: np.ndarray  # enrichment coefficients
    psi_fine: np.ndarray  # exact fine-mesh representation of the multiplier
    residual: float  # relative residual of the full KKT solve
    constraint_residual: float  # norm of the constraint block residual
    mean_gap: float  # | integral over Dc of (u_bar - u_check) |
    _lu: object = field(default=None, repr=False)

    def dump_csv(self, stream: IO[str], problem: "CoupledProblem") -> None:
        """Nodal dump: node id, x, y, value, field in {u_bar, u_check, psi}."""
        stream.write("node,x,y,value,field\n")
        cm, fm = problem.coarse.mesh, problem.fine.mesh
        for i, (x, y) in enumerate(cm.vertices):
            stream.write(f"{i},{x:.17g},{y:.17g},{self.u_bar[i]:.17g},u_bar\n")
        for i, (x, y) in enumerate(fm.vertices):
            stream.write(f"{i},{x:.17g},{y:.17g},{self.u_check[i]:.17g},u_check\n")
        for local, i in enumerate(problem.fine.dc_nodes):
            x, y = fm.vertices[i]
            stream.write(f"{i},{x:.17g},{y:.17g},{self.psi_fine[local]:.17g},psi\n")


@dataclass
class DerivativeTriple:
    """Derivative of the solution triple with respect to a scalar coefficient."""

    order: int
    u_bar: np.ndarray  # coarse nodal values (zero trace on Gamma)
    u_check: np.ndarray
    psi_wh: np.ndarray
    psi_enrich: np.ndarray


@dataclass
class DegenerateSolution:
    """Minimizer family of the coupled problem with the effective model removed.

    Every minimizer has a constant fine field and matches it on Dc; the
    returned representative uses the energy-optimal constant and the
    discrete-harmonic fill-in over D.
    """

    lam: float
    u_bar: np.ndarray
    u_check: np.ndarray
    u0a: np.ndarray  # auxiliary field: x_j data on Gamma, 0 on the Dc closure
    u0b: np.ndarray  # auxiliary field: 0 on Gamma, 1 on the Dc closure


class CoupledProblem:
    """Enriched coupled system on one (geometry, H, m, coefficient, eps) setup."""

    def __init__(
        self,
        spec: geo.DomainSpec,
        H: float,
        refine_ratio: int,
        field: CoefficientField | None = None,
        eps: float | None = None,
        bc_direction: int = 1,
        mode: str = "scalar",
        options: SolverOptions | None = None,
        meshes=None,
    ):
        if bc_direction not in (1, 2):
            raise ValueError(f"bc_direction must be 1 or 2, got {bc_direction}")
        if mode not in ("scalar", "matrix"):
            raise ValueError(f"mode must be 'scalar' or 'matrix', got {mode}")
        self.spec = spec
        self.H = H
        self.ratio = int(refine_ratio)
        self.bc_direction = bc_direction
        self.mode = mode
        self.options = options or SolverOptions()

        if meshes is None:
            meshes = geo.build_domain(spec, H, refine_ratio)
        self.coarse_mesh, self.fine_mesh, self.submap = meshes
        self.coarse = CoarseSpace(self.coarse_mesh, spec)
        self.fine = FineSpace(self.fine_mesh, spec)
        self.coupling = DcCoupling(self.coarse, self.fine, self.ratio)

        dirs = (bc_direction,) if mode == "scalar" else (1, 2)
        self.enrichment: EnrichmentBasis = enriched_multiplier_basis(self.coupling, dirs)

        self.field = field
        self.eps = eps
        self.A_check = None
        if field is not None:
            if eps is None or eps <= 0:
                raise ValueError("a positive eps is required with a coefficient field")
            self.A_check = assemble_Acheck(self.fine, field, eps)
        self.A1 = assemble_A1(self.coarse)

        self._build_constraint_blocks()
        self.lift = self.coarse.lift(bc_direction)

    # -- assembly ----------------------------------------------------------

    def _build_constraint_blocks(self) -> None:
        cpl = self.coupling
        n_mult = self.coarse.dim_wh + self.enrichment.count
        ec = sp.vstack([cpl.C_cf, sp.csr_matrix(self.enrichment.c_psi.T)]).tocsr()

        # fine side: pad Dc columns into the full fine dof set
        pad_f = sp.coo_matrix(
            (np.ones(self.fine.dc_nodes.size), (np.arange(self.fine.dc_nodes.size), self.fine.dc_nodes)),
            shape=(self.fine.dc_nodes.size, self.fine.n_dofs),
        ).tocsr()
        self.B_fine = (ec @ pad_f).tocsr()

        # coarse side: multipliers against coarse trial functions, exact via R
        b_dc = (ec @ cpl.R.T).tocsr()  # (n_mult, n_cdc)
        pad_c = sp.coo_matrix(
            (np.ones(self.coarse.dc_nodes.size), (np.arange(self.coarse.dc_nodes.size), self.coarse.dc_nodes)),
            shape=(self.coarse.dc_nodes.size, self.coarse.n_dofs),
        ).tocsr()
        self.B_coarse = (b_dc @ pad_c).tocsr()
        self.n_mult = n_mult
        self._ni = self.coarse.free_nodes.size
        self._nf = self.fine.n_dofs

    def _kkt(self, a_bar: sp.csr_matrix):
        free = self.coarse.free_nodes
        a_ii = a_bar[free][:, free]
        bc_i = self.B_coarse[:, free]
        kkt = sp.bmat(
            [
                [a_ii, None, bc_i.T],
                [None, self.A_check, -self.B_fine.T],
                [bc_i, -self.B_fine, None],
            ],
            format="csc",
        )
        return kkt

    def _rhs(self, a_bar: sp.csr_matrix) -> np.ndarray:
        free = self.coarse.free_nodes
        b = np.zeros(self._ni + self._nf + self.n_mult)
        b[: self._ni] = -(a_bar[free] @ self.lift)
        b[self._ni + self._nf:] = -(self.B_coarse @ self.lift)
        return b

    def _factorize(self, kkt):
        opts = {"permc_spec": self.options.permc_spec}
        if self.options.pivot_threshold is not None:
            opts["diag_pivot_thresh"] = self.options.pivot_threshold
        try:
            return spla.splu(kkt, **opts)
        except RuntimeError as exc:
            raise SingularKkt(f"KKT factorization failed: {exc}") from exc

    # -- solves ------------------------------------------------------------

    def solve(self, kbar) -> CoupledSolution:
        """Solve the coupled system for the constant coefficient kbar."""
        if self.A_check is None:
            raise SolverFailure("problem was built without a coefficient field")
        try:
            k = check_spd(kbar)
        except NonSpdCoefficient as exc:
            raise SingularKkt(str(exc)) from exc
        a_bar = self._assemble_abar(k)
        kkt = self._kkt(a_bar)
        rhs = self._rhs(a_bar)
        lu = self._factorize(kkt)
        z = lu.solve(rhs)
        if not np.isfinite(z).all():
            raise SingularKkt("KKT solve returned non-finite values")

        res = np.linalg.norm(kkt @ z - rhs)
        scale = max(np.linalg.norm(rhs), 1e-30)
        if res > self.options.residual_tol * max(scale, 1.0):
            raise SolverFailure(
                f"KKT residual {res:.3e} exceeds tolerance at scale {scale:.3e}"
            )

        u_bar = self.lift.copy()
        u_bar[self.coarse.free_nodes] += z[: self._ni]
        u_check = z[self._ni: self._ni + self._nf]
        mult = z[self._ni + self._nf:]
        psi_wh = mult[: self.coarse.dim_wh]
        psi_q = mult[self.coarse.dim_wh:]
        psi_fine = self.coupling.R.T @ psi_wh + self.enrichment.psi @ psi_q

        cres = np.linalg.norm(self.B_coarse @ u_bar - self.B_fine @ u_check)
        gap = abs(
            p1_integral(self.coarse_mesh, u_bar, geo.REGION_DC)
            - p1_integral(self.fine_mesh, u_check, geo.REGION_DC)
        )
        return CoupledSolution(
            kbar=k, u_bar=u_bar, u_check=u_check, psi_wh=psi_wh, psi_enrich=psi_q,
            psi_fine=psi_fine, residual=res / max(scale, 1.0),
            constraint_residual=cres, mean_gap=gap, _lu=lu,
        )

    def _assemble_abar(self, k: np.ndarray) -> sp.csr_matrix:
        return assemble_Abar(self.coarse, k)

    def solve_derivative(self, base: CoupledSolution, order: int) -> DerivativeTriple:
        """Differentiate the solution with respect to a scalar kbar.

        Order 1 uses the right-hand side -A1(u_bar, .); order 2 uses
        -2 A1(u_bar', .) and therefore solves order 1 first.  Both reuse the
        factorization of the base solve.  Scalar coefficients only.
        """
        if self.mode != "scalar":
            raise ValueError("derivative systems are defined for the scalar mode only")
        if order not in (1, 2):
            raise ValueError(f"derivative order must be 1 or 2, got {order}")
        if base._lu is None:
            raise SolverFailure("base solution does not carry its factorization")
        prev = base.u_bar
        factor = 1.0
        if order == 2:
            first = self.solve_derivative(base, 1)
            prev = first.u_bar
            factor = 2.0
        return self._derivative_from(base, prev, factor, order)

    def _derivative_from(self, base, prev_u, factor, order) -> DerivativeTriple:
        free = self.coarse.free_nodes
        b = np.zeros(self._ni + self._nf + self.n_mult)
        b[: self._ni] = -factor * (self.A1[free] @ prev_u)
        z = base._lu.solve(b)
        u_bar = np.zeros(self.coarse.n_dofs)
        u_bar[free] = z[: self._ni]
        u_check = z[self._ni: self._ni + self._nf]
        mult = z[self._ni + self._nf:]
        return DerivativeTriple(
            order=order, u_bar=u_bar, u_check=u_check,
            psi_wh=mult[: self.coarse.dim_wh], psi_enrich=mult[self.coarse.dim_wh:],
        )

    def solve_degenerate(self) -> DegenerateSolution:
        """Characterize the minimizers when the effective coefficient is zero.

        The fine field is a constant, the coarse field matches it on Dc, and
        the energy-optimal representative fills D with the discrete-harmonic
        extension of the two boundary data.
        """
        u0a, u0b, quads = auxiliary_degenerate_fields(self.coarse, self.bc_direction)
        lam = optimal_degenerate_constant(quads)
        u_bar = u0a + lam * u0b
        u_check = np.full(self.fine.n_dofs, lam)
        return DegenerateSolution(lam=lam, u_bar=u_bar, u_check=u_check, u0a=u0a, u0b=u0b)

    # -- diagnostics ---------------------------------------------------------

    def energy(self, u_bar: np.ndarray, u_check: np.ndarray, kbar) -> float:
        """Partitioned coupling energy of an admissible pair."""
        k = check_spd(kbar)
        a_bar = self._assemble_abar(k)
        return 0.5 * float(u_bar @ (a_bar @ u_bar) + u_check @ (self.A_check @ u_check))

    def linear_pair_energy(self, kbar) -> float:
        """Energy of the linear candidate pair (x_j, x_j)."""
        return self.energy(
            self.coarse.lift(self.bc_direction), self.fine.lift(self.bc_direction), kbar
        )


def auxiliary_degenerate_fields(coarse: CoarseSpace, bc_direction: int):
    """Solve the two D-region Laplace fields entering the degenerate analysis.

    u0a carries the x_j Dirichlet data on Gamma and vanishes on the Dc
    closure; u0b carries 0 on Gamma and 1 on the Dc closure.  Both satisfy
    the unit-coefficient equation tested against functions supported in D.
    Returns the fields plus the quadratures needed for the optimal constant
    and the degenerate objective floor.
    """
    mesh = coarse.mesh
    areas, grads, _ = tri_geometry(mesh)
    d_tris = np.nonzero(mesh.region == geo.REGION_D)[0]

    eye = np.broadcast_to(np.eye(2), (d_tris.size, 2, 2))
    local = stiffness_local(mesh, d_tris, eye, np.ones(d_tris.size))
    k_d = _accumulate(mesh, d_tris, local)

    dc_set = np.zeros(mesh.n_vertices, dtype=bool)
    dc_set[coarse.dc_nodes] = True
    gamma_set = np.zeros(mesh.n_vertices, dtype=bool)
    gamma_set[coarse.gamma_nodes] = True
    fixed = dc_set | gamma_set
    free = np.nonzero(~fixed)[0]

    # right-hand side from the e_j misfit term; zero analytically, kept for fidelity
    e_rhs = np.zeros(mesh.n_vertices)
    gv = grads[d_tris, :, bc_direction - 1] * areas[d_tris][:, None]
    np.add.at(e_rhs, mesh.triangles[d_tris], gv)

    lu = spla.splu(k_d[free][:, free].tocsc(), permc_spec="COLAMD")

    u0a = np.zeros(mesh.n_vertices)
    u0a[coarse.gamma_nodes] = mesh.vertices[coarse.gamma_nodes, bc_direction - 1]
    u0a[free] = lu.solve(e_rhs[free] - k_d[free] @ u0a)

    u0b = np.zeros(mesh.n_vertices)
    u0b[dc_set] = 1.0
    u0b[free] = lu.solve(e_rhs[free] - k_d[free] @ u0b)

    # quadratures over D used by the existence-condition report
    gu_a = np.einsum("tik,ti->tk", grads[d_tris], u0a[mesh.triangles[d_tris]])
    gu_a[:, bc_direction - 1] -= 1.0
    gu_b = np.einsum("tik,ti->tk", grads[d_tris], u0b[mesh.triangles[d_tris]])
    w = areas[d_tris]
    quads = {
        "misfit_a": float(np.sum(w * np.einsum("tk,tk->t", gu_a, gu_a))),
        "cross_ab": float(np.sum(w * np.einsum("tk,tk->t", gu_b, gu_a))),
        "norm_b": float(np.sum(w * np.einsum("tk,tk->t", gu_b, gu_b))),
    }
    return u0a, u0b, quads


def optimal_degenerate_constant(quads: dict) -> float:
    if quads["norm_b"] <= 0:
        return 0.0
    return -quads["cross_ab"] / quads["norm_b"]


def solve_coupled(
    kbar,
    field: CoefficientField,
    eps: float,
    meshes,
    bc_direction: int = 1,
    mode: str = "scalar",
    spec: geo.DomainSpec | None = None,
    options: SolverOptions | None = None,
) -> CoupledSolution:
    """One-shot coupled solve on prebuilt meshes (functional wrapper)."""
    problem = problem_from_meshes(meshes, field, eps, bc_direction, mode, spec, options)
    return problem.solve(kbar)


def problem_from_meshes(
    meshes, field, eps, bc_direction=1, mode="scalar", spec=None, options=None
) -> CoupledProblem:
    coarse, fine, submap = meshes
    if spec is None:
        spec = _spec_from_meshes(coarse, fine)
    return CoupledProblem(
        spec, coarse.step, submap.ratio, field, eps, bc_direction, mode, options,
        meshes=meshes,
    )


def _spec_from_meshes(coarse: geo.Mesh, fine: geo.Mesh) -> geo.DomainSpec:
    H = coarse.step
    n = coarse.marks["n"]
    pc = coarse.marks["pc"]
    p = coarse.marks["p"]
    L = 0.5 * n * H
    L_c = L - pc * H
    L_f = L - p * H
    return geo.DomainSpec(L=L, L_c=L_c, L_f=L_f)
