import numpy as np
import pytest

import arlequin as aq
from arlequin import fem
from arlequin.geometry import REGION_DC, REGION_DF


@pytest.fixture(scope="module")
def abar421(spaces421):
    cs, _ = spaces421
    return aq.assemble_Abar(cs, np.eye(2))


class TestAbar:
    def test_linear_field_energy(self, spaces421, spec421, abar421):
        cs, _ = spaces421
        x1 = cs.lift(1)
        val = x1 @ (abar421 @ x1)
        exact = spec421.area_d + 0.5 * spec421.area_dc  # |D| + |Dc|/2 = 54
        assert abs(val - exact) < 1e-12 * exact

    def test_scaling_in_kbar(self, spaces421, abar421):
        cs, _ = spaces421
        a2 = aq.assemble_Abar(cs, 2.0 * np.eye(2))
        assert abs(a2 - 2.0 * abar421).max() < 1e-12

    def test_anisotropic_diagonal(self, spaces421, spec421):
        cs, _ = spaces421
        a = aq.assemble_Abar(cs, np.diag([1.0, 3.0]))
        x2 = cs.lift(2)
        val = x2 @ (a @ x2)
        exact = 3.0 * (spec421.area_d + 0.5 * spec421.area_dc)
        assert abs(val - exact) < 1e-12 * exact

    def test_rejects_non_spd(self, spaces421):
        cs, _ = spaces421
        with pytest.raises(aq.NonSpdCoefficient):
            aq.assemble_Abar(cs, np.array([[1.0, 2.0], [2.0, 1.0]]))  # eigenvalue -1
        with pytest.raises(aq.NonSpdCoefficient):
            aq.assemble_Abar(cs, np.array([[1.0, 0.5], [0.0, 1.0]]))  # not symmetric

    def test_symmetry_exact(self, abar421):
        assert abs(abar421 - abar421.T).max() == 0.0


class TestAcheck:
    def test_constant_coefficient(self, spaces421, spec421):
        _, fs = spaces421
        f = aq.coefficient_zoo("constant", c=2.5)
        a = aq.assemble_Acheck(fs, f, 0.5)
        x1 = fs.lift(1)
        val = x1 @ (a @ x1)
        exact = 2.5 * (0.5 * spec421.area_dc + spec421.area_df)  # 2.5 * 10
        assert abs(val - exact) < 1e-12 * exact

    def test_constant_function_zero_energy(self, spaces421):
        _, fs = spaces421
        f = aq.coefficient_zoo("constant", c=1.0)
        a = aq.assemble_Acheck(fs, f, 1.0)
        ones = np.ones(fs.n_dofs)
        assert abs(ones @ (a @ ones)) < 1e-12

    def test_checkerboard_against_plain_quadrature(self, spaces421, spec421):
        # independent path: per-element python accumulation of the same form
        _, fs = spaces421
        field = aq.coefficient_zoo("checkerboard", a=1.0, b=4.0)
        eps = spec421.L_f / 2.0
        a = aq.assemble_Acheck(fs, field, eps)
        x1 = fs.lift(1)
        val = x1 @ (a @ x1)

        mesh = fs.mesh
        areas, _, cents = fem.tri_geometry(mesh)
        total = 0.0
        for t in range(mesh.n_triangles):
            w = 0.5 if mesh.region[t] == REGION_DC else 1.0
            k = field.eval_matrix(cents[t] / eps)[0]
            total += w * areas[t] * k[0, 0]  # grad x1 = e1
        assert abs(val - total) < 1e-10 * abs(total)
        lo = 1.0 * (0.5 * spec421.area_dc + spec421.area_df)
        hi = 4.0 * (0.5 * spec421.area_dc + spec421.area_df)
        assert lo <= val <= hi


class TestCForm:
    def test_mass_of_constants(self, spaces421, coupling421, spec421):
        cs, fs = spaces421
        c_ff = aq.assemble_C(fs, fs)
        ones = np.ones(fs.dc_nodes.size)
        assert abs(ones @ (c_ff @ ones) - spec421.area_dc) < 1e-12 * spec421.area_dc

    def test_odd_integrand_vanishes(self, spaces421):
        _, fs = spaces421
        c_ff = aq.assemble_C(fs, fs)
        x1 = fs.lift(1)[fs.dc_nodes]
        ones = np.ones(fs.dc_nodes.size)
        assert abs(x1 @ (c_ff @ ones)) < 1e-10

    def test_linear_field_value(self, spaces421, spec421):
        # |Dc| gradient part + (4/3)(L_c^4 - L_f^4) mass part = 12 + 20 = 32
        _, fs = spaces421
        c_ff = aq.assemble_C(fs, fs)
        x1 = fs.lift(1)[fs.dc_nodes]
        val = x1 @ (c_ff @ x1)
        exact = spec421.area_dc + (4.0 / 3.0) * (spec421.L_c**4 - spec421.L_f**4)
        assert abs(val - exact) < 1e-12 * exact

    def test_coarse_matches_fine_representation(self, spaces421, coupling421):
        # direct coarse assembly == R C_ff R^T, since coarse functions are
        # piecewise affine on the fine mesh
        cs, _ = spaces421
        c_cc_direct = aq.assemble_C(cs, cs)
        diff = abs(c_cc_direct - coupling421.C_cc).max()
        assert diff < 1e-12

    def test_cross_block_against_dense_quadrature(self, tiny_spec, tiny_meshes):
        # 2x2-cell gluing zone: integrate coarse x fine products per child
        # triangle with the exact edge-midpoint rule
        coarse_m, fine_m, sub = tiny_meshes
        cs = aq.CoarseSpace(coarse_m, tiny_spec)
        fs = aq.FineSpace(fine_m, tiny_spec)
        cpl = aq.DcCoupling(cs, fs, sub.ratio)
        c_cf = aq.assemble_C(cs, fs, cpl)

        r = cpl.R.toarray()
        nc, nf = r.shape
        dense = np.zeros((nc, nf))
        areas, grads, _ = fem.tri_geometry(fine_m)
        fmap = fs._dc_map
        for t in np.nonzero(fine_m.region == REGION_DC)[0]:
            tri = fine_m.triangles[t]
            loc = fmap[tri]
            pts = fine_m.vertices[tri]
            mids = 0.5 * (pts + pts[[1, 2, 0]])
            for i in range(nc):
                # coarse basis i on this child: linear with nodal values r[i, loc]
                vals_i = r[i, loc]
                g_i = vals_i @ grads[t]
                for jloc in range(3):
                    vals_j = np.zeros(3)
                    vals_j[jloc] = 1.0
                    g_j = grads[t][jloc]
                    grad_part = areas[t] * (g_i @ g_j)
                    f_i = np.array([vals_i @ _bary(pts, m) for m in mids])
                    f_j = np.array([vals_j @ _bary(pts, m) for m in mids])
                    mass_part = areas[t] / 3.0 * (f_i * f_j).sum()
                    dense[i, fmap[tri[jloc]]] += grad_part + mass_part
        assert np.abs(c_cf.toarray() - dense).max() < 1e-12

    def test_symmetry_and_positivity(self, tiny_spec, tiny_meshes):
        # C is an inner product: exactly symmetric, positive smallest eigenvalue
        _, fine_m, _ = tiny_meshes
        fs = aq.FineSpace(fine_m, tiny_spec)
        c_ff = aq.assemble_C(fs, fs)
        assert abs(c_ff - c_ff.T).max() == 0.0
        ev = np.linalg.eigvalsh(c_ff.toarray())
        assert ev.min() > 0.0

    def test_mismatched_region_guard(self, spaces421, coupling421, tiny_meshes, tiny_spec):
        cs, fs = spaces421
        other = aq.FineSpace(tiny_meshes[1], tiny_spec)
        with pytest.raises(aq.MismatchedRegion):
            aq.assemble_C(cs, other, coupling421)
        with pytest.raises(aq.MismatchedRegion):
            aq.DcCoupling(cs, other, 2)


def _bary(pts, x):
    """P1 basis values of a triangle at point x."""
    a = np.vstack([pts.T, np.ones(3)])
    return np.linalg.solve(a, np.array([x[0], x[1], 1.0]))


class TestProjection:
    def test_idempotent_on_wh(self, spaces421, coupling421):
        cs, fs = spaces421
        rng = np.random.default_rng(3)
        p_in = rng.standard_normal(cs.dim_wh)
        v = coupling421.R.T @ p_in  # exact fine representation of a W_H member
        p_out, _ = aq.project_WH(coupling421, v)
        assert np.abs(p_out - p_in).max() < 1e-10

    def test_orthogonality(self, spaces421, coupling421):
        _, fs = spaces421
        rng = np.random.default_rng(4)
        v = rng.standard_normal(fs.dc_nodes.size)
        p, _ = aq.project_WH(coupling421, v)
        residual = coupling421.C_cf @ v - coupling421.C_cc @ p
        assert np.abs(residual).max() < 1e-10

    def test_reproduces_linear(self, spaces421, coupling421):
        cs, fs = spaces421
        v = fs.lift(1)[fs.dc_nodes]
        p, _ = aq.project_WH(coupling421, v)
        assert np.abs(p - cs.lift(1)[cs.dc_nodes]).max() < 1e-10

    def test_enriched_projection_of_member(self, spaces421, coupling421):
        from arlequin.enrichment import solve_psi0

        _, fs = spaces421
        psi = solve_psi0(fs, 1, coupling421)
        p, q = aq.project_WH(coupling421, psi, enrichment=psi)
        assert abs(q[0] - 1.0) < 1e-10
        assert np.abs(p).max() < 1e-10


def test_dim_wh_equals_dc_vertex_count(spaces421, meshes421):
    cs, fs = spaces421
    coarse, fine, _ = meshes421
    expected = sum(
        1 for v in coarse.vertices if 1.0 - 1e-12 <= np.abs(v).max() <= 2.0 + 1e-12
    )
    assert cs.dim_wh == expected


def test_p1_integral_regions(meshes421):
    _, fine, _ = meshes421
    ones = np.ones(fine.n_vertices)
    assert abs(fem.p1_integral(fine, ones, REGION_DC) - 12.0) < 1e-12
    assert abs(fem.p1_integral(fine, ones, REGION_DF) - 4.0) < 1e-12
    x1 = fine.vertices[:, 0]
    assert abs(fem.p1_integral(fine, x1, REGION_DC)) < 1e-12


def test_dump_matrix_coo(coupling421):
    import io

    buf = io.StringIO()
    fem.dump_matrix_coo(coupling421.C_cc[:4, :4], buf)
    lines = buf.getvalue().strip().splitlines()
    assert all(len(ln.split()) == 3 for ln in lines)
    rows = [int(ln.split()[0]) for ln in lines]
    assert rows == sorted(rows)
