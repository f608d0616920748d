"""Reference homogenized tensor from periodic corrector solves on the unit cell.

This path is fully independent of the coupled solver: a uniform n x n P1 mesh
of (0,1)^2 with identified opposite boundaries, one SPD solve per coordinate
direction, and the cell average of the corrected flux.  It anchors the
acceptance tests of the identification method.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .coefficients import CoefficientField
from .errors import SolverFailure


@dataclass
class CellProblem:
    """Periodic unit-cell discretization with midpoint coefficient samples."""

    n: int
    dof_of_vertex: np.ndarray  # (n+1, n+1) periodic dof ids
    triangles: np.ndarray  # (2 n^2, 3) dof triples
    areas: np.ndarray
    grads: np.ndarray
    k_samples: np.ndarray  # (t, 2, 2)

    @property
    def n_dofs(self) -> int:
        return self.n * self.n


@dataclass
class HomogenizedTensor:
    """Constant effective tensor with its resolution and error bookkeeping."""

    kstar: np.ndarray  # (2, 2) symmetric
    resolution: int
    error_estimate: float | None = None
    asymmetry: float = 0.0
    resolutions: tuple[int, ...] = ()

    def column(self, direction: int) -> np.ndarray:
        return self.kstar[:, direction - 1]


def build_cell_problem(field: CoefficientField, n: int) -> CellProblem:
    """Uniform periodic triangulation of the unit cell, diagonal split."""
    if n < 8 or n % 2 != 0:
        raise ValueError(f"cell resolution must be even and >= 8, got {n}")
    h = 1.0 / n
    ii, jj = np.meshgrid(np.arange(n + 1), np.arange(n + 1), indexing="ij")
    dof = (ii % n) * n + (jj % n)

    ci, cj = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    ci = ci.reshape(-1)
    cj = cj.reshape(-1)
    v00 = dof[ci, cj]
    v10 = dof[ci + 1, cj]
    v01 = dof[ci, cj + 1]
    v11 = dof[ci + 1, cj + 1]
    tris = np.empty((2 * n * n, 3), dtype=np.int64)
    tris[0::2] = np.column_stack([v00, v10, v11])
    tris[1::2] = np.column_stack([v00, v11, v01])

    areas = np.full(tris.shape[0], 0.5 * h * h)
    # reference gradients of the two congruent right triangles
    g_lower = np.array([[-1.0, 0.0], [1.0, -1.0], [0.0, 1.0]]) / h
    g_upper = np.array([[0.0, -1.0], [1.0, 0.0], [-1.0, 1.0]]) / h
    grads = np.empty((tris.shape[0], 3, 2))
    grads[0::2] = g_lower
    grads[1::2] = g_upper

    x0 = ci * h
    y0 = cj * h
    cent = np.empty((tris.shape[0], 2))
    cent[0::2, 0] = x0 + 2.0 * h / 3.0
    cent[0::2, 1] = y0 + h / 3.0
    cent[1::2, 0] = x0 + h / 3.0
    cent[1::2, 1] = y0 + 2.0 * h / 3.0
    k_samples = field.eval_matrix(cent)
    return CellProblem(
        n=n, dof_of_vertex=dof, triangles=tris, areas=areas, grads=grads,
        k_samples=k_samples,
    )


def _cell_stiffness(cell: CellProblem) -> sp.csr_matrix:
    kg = np.einsum("tab,tjb->tja", cell.k_samples, cell.grads)
    local = np.einsum("tia,tja->tij", cell.grads, kg) * cell.areas[:, None, None]
    rows = np.repeat(cell.triangles, 3, axis=1).reshape(-1)
    cols = np.tile(cell.triangles, (1, 3)).reshape(-1)
    m = cell.n_dofs
    return sp.coo_matrix((local.reshape(-1), (rows, cols)), shape=(m, m)).tocsr()


def solve_corrector(
    field: CoefficientField,
    n: int,
    direction: int,
    cell: CellProblem | None = None,
    rtol: float = 1e-10,
) -> np.ndarray:
    """Zero-mean periodic corrector for coordinate direction 1 or 2.

    Solves the cell problem div(k_per (e_i + grad w)) = 0 with periodic
    boundary conditions; the one-dimensional kernel of constants is removed
    by pinning one dof, then shifting to zero mean.
    """
    if direction not in (1, 2):
        raise ValueError(f"direction must be 1 or 2, got {direction}")
    if cell is None:
        cell = build_cell_problem(field, n)
    k = _cell_stiffness(cell)

    e = np.zeros(2)
    e[direction - 1] = 1.0
    flux = np.einsum("tab,b->ta", cell.k_samples, e)  # k e_i per triangle
    contrib = -np.einsum("tja,ta->tj", cell.grads, flux) * cell.areas[:, None]
    rhs = np.zeros(cell.n_dofs)
    np.add.at(rhs, cell.triangles.reshape(-1), contrib.reshape(-1))

    keep = np.arange(1, cell.n_dofs)  # pin dof 0; kernel is the constants
    k_red = k[keep][:, keep].tocsc()
    try:
        lu = spla.splu(k_red, permc_spec="COLAMD")
    except RuntimeError as exc:
        raise SolverFailure(f"corrector factorization failed: {exc}") from exc
    w = np.zeros(cell.n_dofs)
    w[keep] = lu.solve(rhs[keep])

    res = np.linalg.norm(k_red @ w[keep] - rhs[keep])
    scale = max(np.linalg.norm(rhs[keep]), 1.0)
    if res > rtol * scale:
        raise SolverFailure(f"corrector residual {res / scale:.3e} exceeds {rtol:.1e}")

    # exact P1 mean over the cell (area 1)
    mean = float(np.sum(cell.areas * w[cell.triangles].sum(axis=1) / 3.0))
    return w - mean


def homogenized_tensor(field: CoefficientField, n: int) -> HomogenizedTensor:
    """Effective tensor k* with columns k* e_i = cell average of k_per (e_i + grad w_i)."""
    cell = build_cell_problem(field, n)
    kstar = np.zeros((2, 2))
    for i in (1, 2):
        w = solve_corrector(field, n, i, cell=cell)
        gw = np.einsum("tjk,tj->tk", cell.grads, w[cell.triangles])
        gw[:, i - 1] += 1.0
        flux = np.einsum("tab,tb->ta", cell.k_samples, gw)
        kstar[:, i - 1] = np.einsum("t,ta->a", cell.areas, flux)
    asym = abs(kstar[0, 1] - kstar[1, 0])
    kstar = 0.5 * (kstar + kstar.T)
    return HomogenizedTensor(kstar=kstar, resolution=n, asymmetry=asym)


def richardson_tensor(
    field: CoefficientField, resolutions: tuple[int, ...] = (64, 128, 256)
) -> HomogenizedTensor:
    """Richardson-extrapolated tensor from a refinement ladder.

    The convergence order is estimated entrywise from the last three levels;
    entries that have already converged to round-off are taken from the
    finest level directly.  The error estimate is the last-level increment.
    """
    if len(resolutions) < 2:
        tensor = homogenized_tensor(field, resolutions[-1])
        tensor.resolutions = tuple(resolutions)
        return tensor
    tensors = [homogenized_tensor(field, n).kstar for n in resolutions]
    k0 = tensors[-1]
    extrap = k0.copy()
    if len(tensors) >= 3:
        # order estimated from the last three levels; assumes a doubling ladder
        k2, k1 = tensors[-3], tensors[-2]
        for idx in np.ndindex(2, 2):
            d1 = k1[idx] - k2[idx]
            d0 = k0[idx] - k1[idx]
            scale = max(abs(k0[idx]), 1.0)
            if abs(d0) > 1e-13 * scale and d1 * d0 > 0 and abs(d0) < abs(d1):
                p = np.log2(d1 / d0)
                p = min(max(p, 0.5), 4.0)
                extrap[idx] = k0[idx] + d0 / (2.0**p - 1.0)
            # else: converged or non-monotone; keep the finest value
    err = float(np.abs(tensors[-1] - tensors[-2]).max())
    return HomogenizedTensor(
        kstar=0.5 * (extrap + extrap.T),
        resolution=resolutions[-1],
        error_estimate=err,
        resolutions=tuple(resolutions),
    )


def voigt_reuss_bounds(field: CoefficientField, n: int = 256) -> tuple[np.ndarray, np.ndarray]:
    """Harmonic (Reuss) and arithmetic (Voigt) mean matrices on an n x n midpoint grid."""
    cell = build_cell_problem(field, n)
    w = cell.areas[:, None, None]
    arith = (w * cell.k_samples).sum(axis=0)
    inv = np.linalg.inv(cell.k_samples)
    harm = np.linalg.inv((w * inv).sum(axis=0))
    return harm, arith
