"""P1 finite-element spaces and assembly of the coupling forms.

Assembles the weighted stiffness forms of the effective and fine models, the
H1(Dc) coupling form C, and the exact coarse-to-fine restriction that the
nested meshes make possible.  Element loops are vectorized with a pinned
accumulation order so repeated runs are bit-stable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import geometry as geo
from .coefficients import CoefficientField, sample_k_eps
from .errors import MismatchedRegion, NonSpdCoefficient, SingularGram

_LOCAL_MASS = np.array([[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]]) / 12.0


def tri_geometry(mesh: geo.Mesh):
    """Per-triangle areas, P1 basis gradients and centroids (cached on the mesh)."""
    cached = getattr(mesh, "_trigeo", None)
    if cached is not None:
        return cached
    p = mesh.vertices[mesh.triangles]  # (t, 3, 2)
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    areas = 0.5 * det
    grads = np.empty((p.shape[0], 3, 2))
    # grad of barycentric coordinates: rotate opposite edge by 90 degrees / (2A)
    for i in range(3):
        e = p[:, (i + 2) % 3] - p[:, (i + 1) % 3]
        grads[:, i, 0] = -e[:, 1] / det
        grads[:, i, 1] = e[:, 0] / det
    centroids = p.mean(axis=1)
    mesh._trigeo = (areas, grads, centroids)
    return mesh._trigeo


def _accumulate(mesh, tri_idx, local, shape=None, row_map=None, col_map=None):
    """Scatter (t, 3, 3) local matrices into a CSR matrix."""
    tris = mesh.triangles[tri_idx]
    rows = np.repeat(tris, 3, axis=1).reshape(-1)
    cols = np.tile(tris, (1, 3)).reshape(-1)
    if row_map is not None:
        rows = row_map[rows]
    if col_map is not None:
        cols = col_map[cols]
    if shape is None:
        shape = (mesh.n_vertices, mesh.n_vertices)
    if (rows < 0).any() or (cols < 0).any():
        raise AssertionError("element references a dof outside the target space")
    mat = sp.coo_matrix((local.reshape(-1), (rows, cols)), shape=shape)
    return mat.tocsr()


def stiffness_local(mesh: geo.Mesh, tri_idx, k_matrices, weights) -> np.ndarray:
    """Local matrices w * A * grad^T K grad for the selected triangles."""
    areas, grads, _ = tri_geometry(mesh)
    g = grads[tri_idx]
    kg = np.einsum("tab,tjb->tja", k_matrices, g)
    s = np.einsum("tia,tja->tij", g, kg)
    return s * (areas[tri_idx] * weights)[:, None, None]


def mass_local(mesh: geo.Mesh, tri_idx, weights) -> np.ndarray:
    areas, _, _ = tri_geometry(mesh)
    return _LOCAL_MASS[None, :, :] * (areas[tri_idx] * weights)[:, None, None]


def check_spd(kbar) -> np.ndarray:
    """Promote a scalar to kbar * I and verify symmetric positive definiteness."""
    k = np.asarray(kbar, dtype=float)
    if k.ndim == 0:
        k = float(k) * np.eye(2)
    if k.shape != (2, 2):
        raise NonSpdCoefficient(f"expected scalar or 2x2 matrix, got shape {k.shape}")
    scale = max(1.0, float(np.abs(k).max()))
    if abs(k[0, 1] - k[1, 0]) > 1e-12 * scale:
        raise NonSpdCoefficient(f"coefficient is not symmetric: {k.tolist()}")
    ev = np.linalg.eigvalsh(0.5 * (k + k.T))
    if ev.min() <= 0:
        raise NonSpdCoefficient(f"coefficient has eigenvalues {ev.tolist()}, not SPD")
    return 0.5 * (k + k.T)


class CoarseSpace:
    """V_H on D u Dc: Dirichlet trace on Gamma, multiplier dofs W_H on the Dc closure."""

    def __init__(self, mesh: geo.Mesh, spec: geo.DomainSpec):
        self.mesh = mesh
        self.spec = spec
        n = mesh.marks["n"]
        pc, qc = mesh.marks["pc"], mesh.marks["qc"]
        p, q = mesh.marks["p"], mesh.marks["q"]
        li, lj = mesh.lattice[:, 0], mesh.lattice[:, 1]

        on_gamma = (li == 0) | (li == n) | (lj == 0) | (lj == n)
        self.gamma_nodes = np.nonzero(on_gamma)[0]
        self.free_nodes = np.nonzero(~on_gamma)[0]

        in_c_square = (li >= pc) & (li <= qc) & (lj >= pc) & (lj <= qc)
        in_hole = (li > p) & (li < q) & (lj > p) & (lj < q)
        self.dc_nodes = np.nonzero(in_c_square & ~in_hole)[0]

        self._free_map = -np.ones(mesh.n_vertices, dtype=np.int64)
        self._free_map[self.free_nodes] = np.arange(self.free_nodes.size)
        self._dc_map = -np.ones(mesh.n_vertices, dtype=np.int64)
        self._dc_map[self.dc_nodes] = np.arange(self.dc_nodes.size)

    @property
    def n_dofs(self) -> int:
        return self.mesh.n_vertices

    @property
    def dim_wh(self) -> int:
        return self.dc_nodes.size

    def lift(self, direction: int) -> np.ndarray:
        """Nodal interpolant of x_j; exact since P1 reproduces linear functions."""
        return self.mesh.vertices[:, direction - 1].copy()


class FineSpace:
    """V_h on Dc u Df, with the W_h multiplier dofs on the Dc closure."""

    def __init__(self, mesh: geo.Mesh, spec: geo.DomainSpec):
        self.mesh = mesh
        self.spec = spec
        a, b = mesh.marks["a"], mesh.marks["b"]
        li, lj = mesh.lattice[:, 0], mesh.lattice[:, 1]
        in_hole = (li > a) & (li < b) & (lj > a) & (lj < b)
        self.dc_nodes = np.nonzero(~in_hole)[0]
        self._dc_map = -np.ones(mesh.n_vertices, dtype=np.int64)
        self._dc_map[self.dc_nodes] = np.arange(self.dc_nodes.size)

    @property
    def n_dofs(self) -> int:
        return self.mesh.n_vertices

    @property
    def dim_wh(self) -> int:
        return self.dc_nodes.size

    def lift(self, direction: int) -> np.ndarray:
        return self.mesh.vertices[:, direction - 1].copy()


def assemble_Abar(space: CoarseSpace, kbar) -> sp.csr_matrix:
    """Effective-model form: full weight on D, half weight on the gluing zone."""
    k = check_spd(kbar)
    mesh = space.mesh
    tri_idx = np.arange(mesh.n_triangles)
    weights = np.where(mesh.region == geo.REGION_DC, 0.5, 1.0)
    kmats = np.broadcast_to(k, (tri_idx.size, 2, 2))
    local = stiffness_local(mesh, tri_idx, kmats, weights)
    return _accumulate(mesh, tri_idx, local)


def assemble_A1(space: CoarseSpace) -> sp.csr_matrix:
    """Unit-coefficient variant of the effective form (derivative of Abar in kbar)."""
    return assemble_Abar(space, 1.0)


def assemble_Acheck(space: FineSpace, field: CoefficientField, eps: float) -> sp.csr_matrix:
    """Fine-model form: half weight on Dc, full weight on Df, midpoint-sampled k_eps."""
    mesh = space.mesh
    _, _, centroids = tri_geometry(mesh)
    tri_idx = np.arange(mesh.n_triangles)
    kmats = sample_k_eps(field, eps, centroids)
    weights = np.where(mesh.region == geo.REGION_DC, 0.5, 1.0)
    local = stiffness_local(mesh, tri_idx, kmats, weights)
    return _accumulate(mesh, tri_idx, local)


def _assemble_c_dc(mesh: geo.Mesh, dc_map: np.ndarray, n_dc: int) -> sp.csr_matrix:
    """H1 inner product over the Dc triangles of one mesh, on its Dc dofs."""
    tri_idx = np.nonzero(mesh.region == geo.REGION_DC)[0]
    eye = np.broadcast_to(np.eye(2), (tri_idx.size, 2, 2))
    ones = np.ones(tri_idx.size)
    local = stiffness_local(mesh, tri_idx, eye, ones) + mass_local(mesh, tri_idx, ones)
    return _accumulate(mesh, tri_idx, local, shape=(n_dc, n_dc), row_map=dc_map, col_map=dc_map)


def restriction_matrix(coarse: CoarseSpace, fine: FineSpace, ratio: int) -> sp.csr_matrix:
    """Values of the W_H basis at the fine Dc nodes, computed in integer arithmetic.

    Row i gives the fine-nodal representation of the i-th coarse Dc basis
    function; exactness relies on the fine mesh being a submesh of the coarse
    mesh in Dc with the same diagonal orientation.
    """
    m = ratio
    cmesh, fmesh = coarse.mesh, fine.mesh
    pc = cmesh.marks["pc"]
    # fine lattice coordinates shifted to the global coarse lattice (h units)
    fl = fmesh.lattice[fine.dc_nodes]
    gx = fl[:, 0] + pc * m
    gy = fl[:, 1] + pc * m
    # the fine region ends at lattice line qc < n, so ci + 1 stays in range
    ci = gx // m
    cj = gy // m
    rx = gx - ci * m
    ry = gy - cj * m

    xi = rx / m
    eta = ry / m
    lower = rx >= ry
    # corner weights of the containing coarse sub-triangle
    w00 = np.where(lower, 1.0 - xi, 1.0 - eta)
    w_mid = np.where(lower, xi - eta, eta - xi)  # node (1,0) if lower else (0,1)
    w11 = np.where(lower, eta, xi)

    vid = cmesh.vertex_ids
    mid_i = np.where(lower, ci + 1, ci)
    mid_j = np.where(lower, cj, cj + 1)
    corners = np.stack([vid[ci, cj], vid[mid_i, mid_j], vid[ci + 1, cj + 1]], axis=1)
    weights = np.stack([w00, w_mid, w11], axis=1)

    rows_f = np.repeat(np.arange(fine.dc_nodes.size), 3)
    cols_c = corners.reshape(-1)
    vals = weights.reshape(-1)
    keep = vals != 0.0  # zero weights may reference lattice points outside the mesh
    cols_c = cols_c[keep]
    rows_f = rows_f[keep]
    vals = vals[keep]
    if (cols_c < 0).any():
        raise AssertionError("nonzero restriction weight on an absent coarse vertex")
    cols_dc = coarse._dc_map[cols_c]
    if (cols_dc < 0).any():
        raise AssertionError("restriction hit a coarse node outside the Dc closure")
    mat = sp.coo_matrix(
        (vals, (cols_dc, rows_f)), shape=(coarse.dim_wh, fine.dc_nodes.size)
    )
    return mat.tocsr()


class DcCoupling:
    """Exact coupling data over the gluing zone: C forms and the restriction R.

    All cross-space blocks derive from the fine-mesh form C_ff, so the coarse,
    fine and mixed inner products are mutually consistent to round-off.
    """

    def __init__(self, coarse: CoarseSpace, fine: FineSpace, ratio: int):
        cs, fs = coarse.spec, fine.spec
        if (cs.L_c, cs.L_f) != (fs.L_c, fs.L_f):
            raise MismatchedRegion("coarse and fine spaces disagree on the gluing zone")
        self.coarse = coarse
        self.fine = fine
        self.ratio = ratio
        self.R = restriction_matrix(coarse, fine, ratio)
        self.C_ff = _assemble_c_dc(fine.mesh, fine._dc_map, fine.dc_nodes.size)
        self.C_cf = (self.R @ self.C_ff).tocsr()
        self.C_cc = (self.C_cf @ self.R.T).tocsr()
        self._cc_lu = None
        self._ff_lu = None

    def cc_solve(self, rhs: np.ndarray) -> np.ndarray:
        if self._cc_lu is None:
            try:
                self._cc_lu = spla.splu(self.C_cc.tocsc(), permc_spec="COLAMD")
            except RuntimeError as exc:
                raise SingularGram(f"W_H Gram factorization failed: {exc}") from exc
        return self._cc_lu.solve(rhs)

    def ff_solve(self, rhs: np.ndarray) -> np.ndarray:
        if self._ff_lu is None:
            self._ff_lu = spla.splu(self.C_ff.tocsc(), permc_spec="COLAMD")
        return self._ff_lu.solve(rhs)


def assemble_C(row_space, col_space, coupling: DcCoupling | None = None) -> sp.csr_matrix:
    """H1(Dc) inner-product matrix between two P1 spaces over the gluing zone.

    Coarse x coarse and fine x fine are assembled directly; the mixed block
    requires the coupling context (exact integration on the children
    triangles via the restriction matrix).
    """
    coarse_row = isinstance(row_space, CoarseSpace)
    coarse_col = isinstance(col_space, CoarseSpace)
    if coarse_row == coarse_col:
        if row_space is not col_space:
            raise MismatchedRegion("same-resolution C requires one space on both sides")
        mesh = row_space.mesh
        return _assemble_c_dc(mesh, row_space._dc_map, row_space.dc_nodes.size)
    if coupling is None:
        raise MismatchedRegion("mixed coarse/fine C needs the DcCoupling context")
    if coarse_row:
        if row_space is not coupling.coarse or col_space is not coupling.fine:
            raise MismatchedRegion("spaces do not match the coupling context")
        return coupling.C_cf
    if row_space is not coupling.fine or col_space is not coupling.coarse:
        raise MismatchedRegion("spaces do not match the coupling context")
    return coupling.C_cf.T.tocsr()


def project_WH(coupling: DcCoupling, v_fine_dc: np.ndarray, enrichment=None):
    """H1(Dc)-orthogonal projection of a fine Dc function onto W_H.

    With ``enrichment`` (columns psi on the fine Dc dofs) the target is the
    enriched multiplier space; returns (coarse coefficients, enrichment
    coefficients or None).
    """
    v = np.asarray(v_fine_dc, dtype=float)
    if v.shape != (coupling.fine.dc_nodes.size,):
        raise MismatchedRegion(
            f"expected a vector on the {coupling.fine.dc_nodes.size} fine Dc dofs"
        )
    rhs_c = coupling.C_cf @ v
    if enrichment is None:
        return coupling.cc_solve(rhs_c), None

    psi = np.atleast_2d(np.asarray(enrichment, dtype=float).T).T
    cps = coupling.C_ff @ psi  # (n_fdc, r)
    border = coupling.R @ cps  # (n_cdc, r)
    d = psi.T @ cps  # (r, r)
    rhs_e = psi.T @ (coupling.C_ff @ v)

    y = coupling.cc_solve(rhs_c)
    z = np.column_stack([coupling.cc_solve(border[:, k]) for k in range(border.shape[1])])
    schur = d - border.T @ z
    try:
        q = np.linalg.solve(schur, rhs_e - border.T @ y)
    except np.linalg.LinAlgError as exc:
        raise SingularGram(f"enriched Gram is singular: {exc}") from exc
    p = y - z @ q
    return p, q


def misfit_energy(space: CoarseSpace, u: np.ndarray, direction: int) -> float:
    """Integral over D u Dc of |grad u - e_j|^2 (exact P1 quadrature)."""
    mesh = space.mesh
    areas, grads, _ = tri_geometry(mesh)
    gu = np.einsum("tik,ti->tk", grads, u[mesh.triangles])
    gu[:, direction - 1] -= 1.0
    return float(np.sum(areas * np.einsum("tk,tk->t", gu, gu)))


def misfit_dot(space: CoarseSpace, u: np.ndarray, w: np.ndarray, direction: int) -> float:
    """Integral over D u Dc of (grad u - e_j) . grad w."""
    mesh = space.mesh
    areas, grads, _ = tri_geometry(mesh)
    gu = np.einsum("tik,ti->tk", grads, u[mesh.triangles])
    gu[:, direction - 1] -= 1.0
    gw = np.einsum("tik,ti->tk", grads, w[mesh.triangles])
    return float(np.sum(areas * np.einsum("tk,tk->t", gu, gw)))


def grad_dot(space: CoarseSpace, u: np.ndarray, w: np.ndarray) -> float:
    """Integral over D u Dc of grad u . grad w."""
    mesh = space.mesh
    areas, grads, _ = tri_geometry(mesh)
    gu = np.einsum("tik,ti->tk", grads, u[mesh.triangles])
    gw = np.einsum("tik,ti->tk", grads, w[mesh.triangles])
    return float(np.sum(areas * np.einsum("tk,tk->t", gu, gw)))


def p1_integral(mesh: geo.Mesh, values: np.ndarray, region: int | None = None) -> float:
    """Exact integral of a P1 function, optionally restricted to one region."""
    areas = mesh.tri_areas()
    sel = np.arange(mesh.n_triangles) if region is None else np.nonzero(mesh.region == region)[0]
    nodal_sum = values[mesh.triangles[sel]].sum(axis=1)
    return float(np.sum(areas[sel] * nodal_sum / 3.0))


def dump_matrix_coo(matrix: sp.spmatrix, stream) -> None:
    """Debug dump of a sparse matrix as 'row col value' lines, row-major."""
    coo = matrix.tocoo()
    order = np.lexsort((coo.col, coo.row))
    for r, c, v in zip(coo.row[order], coo.col[order], coo.data[order]):
        stream.write(f"{r} {c} {v:.17g}\n")
