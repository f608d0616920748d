"""Nested structured triangulations of the square coupling geometry.

The computational domain is the square (-L, L)^2, decomposed into an outer
region D, an annular gluing zone Dc and an inner square Df.  A coarse mesh
covers D and Dc, a fine mesh covers Dc and Df, and inside Dc the fine mesh
refines the coarse one exactly (integer ratio, identical diagonal
orientation), so cross-mesh integrals over Dc can be computed without any
geometric tolerance.

All vertex positions are kept alongside their integer lattice coordinates;
every mesh predicate (region membership, boundary tags, parent lookup) is
decided in integer arithmetic.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import IO

import numpy as np

from .errors import DegenerateSpec, NonDivisibleGeometry, UnknownTag

REGION_D = 0
REGION_DC = 1
REGION_DF = 2
REGION_NAMES = {REGION_D: "D", REGION_DC: "Dc", REGION_DF: "Df"}

GAMMA = "Gamma"
GAMMA_C = "GammaC"
GAMMA_F = "GammaF"

_DIV_TOL = 1e-9


@dataclass(frozen=True)
class DomainSpec:
    """Half-widths of the three nested squares, 0 < L_f < L_c < L."""

    L: float
    L_c: float
    L_f: float

    def __post_init__(self):
        if not (0.0 < self.L_f < self.L_c < self.L):
            raise DegenerateSpec(
                f"need 0 < L_f < L_c < L, got L={self.L}, L_c={self.L_c}, L_f={self.L_f}"
            )

    @property
    def area_omega(self) -> float:
        return 4.0 * self.L**2

    @property
    def area_d(self) -> float:
        return 4.0 * (self.L**2 - self.L_c**2)

    @property
    def area_dc(self) -> float:
        return 4.0 * (self.L_c**2 - self.L_f**2)

    @property
    def area_df(self) -> float:
        return 4.0 * self.L_f**2


def _exact_div(num: float, den: float, what: str) -> int:
    q = num / den
    r = round(q)
    if r < 1 or abs(q - r) > _DIV_TOL * max(1.0, abs(q)):
        raise NonDivisibleGeometry(f"{what}: {den} does not evenly tile {num}")
    return int(r)


@dataclass
class Mesh:
    """Conforming triangulation on a square lattice with region and edge tags.

    ``lattice`` holds per-vertex integer coordinates in units of ``step``
    measured from ``origin``; ``marks`` records the lattice lines of the
    nested squares so that region tests stay exact.
    """

    vertices: np.ndarray  # (n, 2) float
    triangles: np.ndarray  # (t, 3) int, counterclockwise
    region: np.ndarray  # (t,) REGION_* codes
    origin: tuple[float, float]
    step: float
    n_cells: int
    lattice: np.ndarray  # (n, 2) int
    marks: dict[str, int]
    edge_tags: dict[str, np.ndarray] = field(default_factory=dict)
    edge_normals: dict[str, np.ndarray] = field(default_factory=dict)
    cell_tris: np.ndarray | None = None  # (n_cells, n_cells, 2) triangle ids, -1 if absent
    vertex_ids: np.ndarray | None = None  # (n_cells+1, n_cells+1) vertex ids, -1 if absent

    def __post_init__(self):
        self._areas = None
        self._tagged = None

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_triangles(self) -> int:
        return self.triangles.shape[0]

    def tri_areas(self) -> np.ndarray:
        if self._areas is None:
            p = self.vertices[self.triangles]
            d1 = p[:, 1] - p[:, 0]
            d2 = p[:, 2] - p[:, 0]
            self._areas = 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])
        return self._areas

    def region_area(self, code: int) -> float:
        return float(self.tri_areas()[self.region == code].sum())

    def edge_tag(self, v0: int, v1: int) -> str:
        """Tag of the edge (v0, v1); untagged edges are 'interior'."""
        if self._tagged is None:
            tagged = {}
            for tag, pairs in self.edge_tags.items():
                for a, b in pairs:
                    tagged[(min(a, b), max(a, b))] = tag
            self._tagged = tagged
        return self._tagged.get((min(v0, v1), max(v0, v1)), "interior")

    def dump_text(self, stream: IO[str]) -> None:
        """Plain-text dump: vertex, triangle and edge-tag tables."""
        stream.write("# vertices: id x y\n")
        for i, (x, y) in enumerate(self.vertices):
            stream.write(f"{i} {x:.17g} {y:.17g}\n")
        stream.write("# triangles: id v0 v1 v2 region\n")
        for i, (tri, reg) in enumerate(zip(self.triangles, self.region)):
            stream.write(f"{i} {tri[0]} {tri[1]} {tri[2]} {REGION_NAMES[int(reg)]}\n")
        stream.write("# tagged edges: tag v0 v1\n")
        for tag in sorted(self.edge_tags):
            for a, b in self.edge_tags[tag]:
                stream.write(f"{tag} {a} {b}\n")


@dataclass
class SubmeshMap:
    """Fine-to-coarse triangle containment inside the gluing zone Dc."""

    fine_triangles: np.ndarray  # fine triangle indices lying in Dc
    parents: np.ndarray  # coarse triangle index per entry
    ratio: int

    def children_of(self, coarse_tri: int) -> np.ndarray:
        return self.fine_triangles[self.parents == coarse_tri]


def _lattice_mesh(origin, step, n, cell_region):
    """Triangulate the active cells of an (n x n) lattice.

    ``cell_region[i, j]`` holds a REGION_* code or -1 for an inactive cell;
    index i runs along x, j along y.  Each active cell is split along its
    bottom-left/top-right diagonal into a lower and an upper triangle.
    """
    active = cell_region >= 0
    corner = np.zeros((n + 1, n + 1), dtype=bool)
    ai, aj = np.nonzero(active)
    for di in (0, 1):
        for dj in (0, 1):
            corner[ai + di, aj + dj] = True

    # vertex ids scan y-major (j rows, then i) for a pinned ordering
    cj, ci = np.nonzero(corner.T)
    vid = -np.ones((n + 1, n + 1), dtype=np.int64)
    vid[ci, cj] = np.arange(ci.size)
    lattice = np.column_stack([ci, cj]).astype(np.int64)
    vertices = np.asarray(origin, dtype=float)[None, :] + step * lattice

    # cells in y-major order, two triangles per cell: lower then upper
    oj, oi = np.nonzero(active.T)
    v00 = vid[oi, oj]
    v10 = vid[oi + 1, oj]
    v01 = vid[oi, oj + 1]
    v11 = vid[oi + 1, oj + 1]
    lower = np.column_stack([v00, v10, v11])
    upper = np.column_stack([v00, v11, v01])
    triangles = np.empty((2 * oi.size, 3), dtype=np.int64)
    triangles[0::2] = lower
    triangles[1::2] = upper
    region = np.repeat(cell_region[oi, oj], 2)

    cell_tris = -np.ones((n, n, 2), dtype=np.int64)
    cell_tris[oi, oj, 0] = 2 * np.arange(oi.size)
    cell_tris[oi, oj, 1] = 2 * np.arange(oi.size) + 1
    return vertices, triangles, region, lattice, vid, cell_tris


def _ring_edges(vid, lo, hi, inward):
    """Axis-aligned lattice edges of the square ring [lo, hi]^2, with normals.

    Normals point away from the ring center, or toward it when ``inward``.
    """
    pairs, normals = [], []
    rng = np.arange(lo, hi)
    sides = (
        (vid[hi, rng], vid[hi, rng + 1], (1.0, 0.0)),  # right
        (vid[lo, rng], vid[lo, rng + 1], (-1.0, 0.0)),  # left
        (vid[rng, hi], vid[rng + 1, hi], (0.0, 1.0)),  # top
        (vid[rng, lo], vid[rng + 1, lo], (0.0, -1.0)),  # bottom
    )
    for a, b, nrm in sides:
        pairs.append(np.column_stack([a, b]))
        normals.append(np.tile(nrm, (a.size, 1)))
    pairs = np.vstack(pairs)
    normals = np.vstack(normals)
    if inward:
        normals = -normals
    if (pairs < 0).any():
        raise AssertionError("ring touches an inactive vertex")
    return pairs, normals


def build_domain(spec: DomainSpec, H: float, refine_ratio: int):
    """Build the nested coarse and fine meshes and their containment map.

    The coarse mesh (size H) covers D and Dc, the fine mesh (size h = H/m)
    covers Dc and Df, and inside Dc every coarse triangle is tiled by exactly
    m^2 fine triangles.  Boundary edges are tagged Gamma / GammaC / GammaF
    with the normal convention that GammaC and GammaF normals point outward
    from Dc.
    """
    m = int(refine_ratio)
    if m != refine_ratio or m < 2:
        raise DegenerateSpec(f"refine ratio must be an integer >= 2, got {refine_ratio}")
    if H <= 0:
        raise DegenerateSpec(f"mesh size must be positive, got H={H}")

    band_out = _exact_div(spec.L - spec.L_c, H, "L - L_c")  # cells across D band
    band_mid = _exact_div(spec.L_c - spec.L_f, H, "L_c - L_f")  # cells across Dc band
    band_in = _exact_div(2.0 * spec.L_f, H, "2 L_f")  # cells across Df

    N = 2 * band_out + 2 * band_mid + band_in
    pc, qc = band_out, N - band_out  # lattice lines of the L_c square
    p, q = pc + band_mid, N - band_out - band_mid  # lattice lines of the L_f square

    coarse_region = np.full((N, N), REGION_D, dtype=np.int64)
    coarse_region[pc:qc, pc:qc] = REGION_DC
    coarse_region[p:q, p:q] = -1  # hole: coarse mesh stops at GammaF
    cv, ct, cr, clat, cvid, ccells = _lattice_mesh((-spec.L, -spec.L), H, N, coarse_region)
    coarse = Mesh(
        vertices=cv, triangles=ct, region=cr, origin=(-spec.L, -spec.L), step=H,
        n_cells=N, lattice=clat, marks={"pc": pc, "qc": qc, "p": p, "q": q, "n": N},
        cell_tris=ccells, vertex_ids=cvid,
    )
    for tag, lo, hi, inward in (
        (GAMMA, 0, N, False),
        (GAMMA_C, pc, qc, False),
        (GAMMA_F, p, q, True),
    ):
        pairs, normals = _ring_edges(cvid, lo, hi, inward)
        coarse.edge_tags[tag] = pairs
        coarse.edge_normals[tag] = normals

    h = H / m
    nf = m * (2 * band_mid + band_in)
    a = m * band_mid  # lattice lines of the L_f square on the fine lattice
    b = nf - a
    fine_region = np.full((nf, nf), REGION_DC, dtype=np.int64)
    fine_region[a:b, a:b] = REGION_DF
    fv, ft, fr, flat, fvid, fcells = _lattice_mesh((-spec.L_c, -spec.L_c), h, nf, fine_region)
    fine = Mesh(
        vertices=fv, triangles=ft, region=fr, origin=(-spec.L_c, -spec.L_c), step=h,
        n_cells=nf, lattice=flat, marks={"a": a, "b": b, "n": nf},
        cell_tris=fcells, vertex_ids=fvid,
    )
    for tag, lo, hi, inward in ((GAMMA_C, 0, nf, False), (GAMMA_F, a, b, True)):
        pairs, normals = _ring_edges(fvid, lo, hi, inward)
        fine.edge_tags[tag] = pairs
        fine.edge_normals[tag] = normals

    submap = _build_submesh_map(coarse, fine, m, band_out)
    return coarse, fine, submap


def _build_submesh_map(coarse: Mesh, fine: Mesh, m: int, band_out: int) -> SubmeshMap:
    """Locate the coarse parent of every fine triangle inside Dc.

    A fine triangle in fine cell (i, j) with sub-cell offset (rx, ry) lies in
    the lower coarse triangle iff rx >= ry (lower fine triangle) or rx > ry
    (upper fine triangle); integer comparisons only.
    """
    dc = np.nonzero(fine.region == REGION_DC)[0]
    tri_cell_x = np.empty(dc.size, dtype=np.int64)
    tri_cell_y = np.empty(dc.size, dtype=np.int64)
    # cell of a triangle = lattice minimum over its vertices
    lat = fine.lattice[fine.triangles[dc]]
    tri_cell_x = lat[:, :, 0].min(axis=1)
    tri_cell_y = lat[:, :, 1].min(axis=1)
    is_upper = dc % 2 == 1  # builder emits lower, upper per cell

    # coarse cell indices on the global coarse lattice
    ci = tri_cell_x // m + band_out
    cj = tri_cell_y // m + band_out
    rx = tri_cell_x % m
    ry = tri_cell_y % m
    in_lower = np.where(is_upper, rx > ry, rx >= ry)
    parents = coarse.cell_tris[ci, cj, np.where(in_lower, 0, 1)]
    if (parents < 0).any():
        raise AssertionError("fine Dc triangle mapped to an inactive coarse cell")
    return SubmeshMap(fine_triangles=dc, parents=parents, ratio=m)


def boundary_integral_weights(mesh: Mesh, tag: str, direction) -> np.ndarray:
    """Nodal weights w with w . phi = integral over the tagged boundary of (d . n) phi.

    Exact for P1 traces; n is the unit normal outward from Dc on GammaC and
    GammaF.  ``direction`` is a 2-vector or a coordinate index in {1, 2}.
    """
    if tag not in (GAMMA_C, GAMMA_F):
        raise UnknownTag(f"weights are defined for GammaC/GammaF only, got {tag!r}")
    if tag not in mesh.edge_tags:
        raise UnknownTag(f"mesh carries no edges tagged {tag!r}")
    if np.isscalar(direction):
        j = int(direction)
        if j not in (1, 2):
            raise UnknownTag(f"direction index must be 1 or 2, got {direction!r}")
        d = np.zeros(2)
        d[j - 1] = 1.0
    else:
        d = np.asarray(direction, dtype=float)

    pairs = mesh.edge_tags[tag]
    normals = mesh.edge_normals[tag]
    w = np.zeros(mesh.n_vertices)
    contrib = (normals @ d) * (0.5 * mesh.step)  # all tagged edges have length = step
    np.add.at(w, pairs[:, 0], contrib)
    np.add.at(w, pairs[:, 1], contrib)
    return w
