"""Multiplier-space enrichment solved on the fine gluing-zone mesh.

The coarse multiplier space W_H alone cannot represent the multiplier of the
homogenized limit; the enrichment functions computed here (one per coordinate
direction) restore that consistency.  Each one solves an H1(Dc)-coercive
problem whose right-hand side is the boundary flux of the corresponding
coordinate field, and is stored as a raw fine-mesh vector so multipliers stay
piecewise affine on the fine mesh.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass

import numpy as np

from . import geometry as geo
from .errors import CollinearEnrichment, SolverFailure
from .fem import DcCoupling, FineSpace

_COLLINEAR_TOL = 1e-12

_cache_lock = threading.Lock()
_psi_cache: dict[tuple, np.ndarray] = {}


def solve_psi0(
    fine_space: FineSpace,
    direction: int,
    coupling: DcCoupling | None = None,
    rtol: float = 1e-10,
) -> np.ndarray:
    """Solve for the enrichment function on the fine Dc dofs.

    Variational problem: C(psi, phi) equals half the flux of e_j through
    GammaC minus half its flux through GammaF, for every fine test function
    phi on the Dc closure.  The solution has zero mean over Dc because both
    boundary polygons are closed.
    """
    mesh = fine_space.mesh
    w_c = geo.boundary_integral_weights(mesh, geo.GAMMA_C, direction)
    w_f = geo.boundary_integral_weights(mesh, geo.GAMMA_F, direction)
    rhs = 0.5 * (w_c - w_f)[fine_space.dc_nodes]

    if coupling is not None and coupling.fine is fine_space:
        c_ff = coupling.C_ff
        psi = coupling.ff_solve(rhs)
    else:
        from .fem import _assemble_c_dc
        import scipy.sparse.linalg as spla

        c_ff = _assemble_c_dc(mesh, fine_space._dc_map, fine_space.dc_nodes.size)
        psi = spla.splu(c_ff.tocsc(), permc_spec="COLAMD").solve(rhs)

    res = np.linalg.norm(c_ff @ psi - rhs)
    scale = np.linalg.norm(rhs)
    if scale > 0 and res > rtol * scale:
        raise SolverFailure(f"enrichment solve residual {res / scale:.3e} exceeds {rtol:.1e}")
    return psi


def _cached_psi(spec: geo.DomainSpec, fine_space: FineSpace, direction: int,
                coupling: DcCoupling | None) -> np.ndarray:
    key = (spec.L, spec.L_c, spec.L_f, fine_space.mesh.marks["n"], direction)
    with _cache_lock:
        hit = _psi_cache.get(key)
    if hit is not None:
        return hit
    psi = solve_psi0(fine_space, direction, coupling)
    with _cache_lock:
        _psi_cache.setdefault(key, psi)
    return psi


def clear_cache() -> None:
    with _cache_lock:
        _psi_cache.clear()


@dataclass
class EnrichmentBasis:
    """Enrichment vectors on the fine Dc dofs plus their W_H Gram data."""

    directions: tuple[int, ...]
    psi: np.ndarray  # (n_fine_dc, r) columns
    c_psi: np.ndarray  # C_ff @ psi
    border: np.ndarray  # C_cf @ psi, the W_H cross Gram block
    gram: np.ndarray  # psi^T C_ff psi
    wh_distance: np.ndarray  # C-norm distance of each column from W_H

    @property
    def count(self) -> int:
        return self.psi.shape[1]

    def multiplier_dim(self, dim_wh: int) -> int:
        return dim_wh + self.count


def enriched_multiplier_basis(
    coupling: DcCoupling, directions: tuple[int, ...]
) -> EnrichmentBasis:
    """Assemble the enriched multiplier basis W_H + span of the psi vectors.

    Raises CollinearEnrichment if any enrichment is numerically inside W_H
    (a configuration bug: the fine mesh would add nothing to the coarse one).
    """
    spec = coupling.fine.spec
    cols = [_cached_psi(spec, coupling.fine, d, coupling) for d in directions]
    psi = np.column_stack(cols)
    c_psi = coupling.C_ff @ psi
    border = coupling.R @ c_psi
    gram = psi.T @ c_psi

    dist = np.empty(psi.shape[1])
    for k in range(psi.shape[1]):
        p = coupling.cc_solve(border[:, k])
        # distance through the residual vector, immune to Gram cancellation
        r = psi[:, k] - coupling.R.T @ p
        dist[k] = np.sqrt(max(r @ (coupling.C_ff @ r), 0.0))
        norm = np.sqrt(gram[k, k])
        if dist[k] <= _COLLINEAR_TOL * max(1.0, norm):
            raise CollinearEnrichment(
                f"enrichment for direction {directions[k]} lies in W_H "
                f"(distance {dist[k]:.3e})"
            )
    return EnrichmentBasis(
        directions=tuple(directions), psi=psi, c_psi=c_psi, border=border,
        gram=gram, wh_distance=dist,
    )
