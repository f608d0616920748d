import io

import numpy as np
import pytest

import arlequin as aq
from arlequin import fem


@pytest.fixture(scope="module")
def const3_problem(spec421, meshes421):
    field = aq.coefficient_zoo("constant", c=3.0)
    return aq.CoupledProblem(spec421, 0.5, 5, field, 0.5, bc_direction=1, meshes=meshes421)


class TestHomogeneousExactness:
    @pytest.mark.parametrize("c", [0.5, 1.0, 3.0])
    @pytest.mark.parametrize("direction", [1, 2])
    def test_linear_response(self, spec421, meshes421, c, direction):
        field = aq.coefficient_zoo("constant", c=c)
        prob = aq.CoupledProblem(
            spec421, 0.5, 5, field, 0.5, bc_direction=direction, meshes=meshes421
        )
        sol = prob.solve(c)
        assert np.abs(sol.u_bar - prob.coarse.lift(direction)).max() <= 1e-9
        assert np.abs(sol.u_check - prob.fine.lift(direction)).max() <= 1e-9
        # multiplier is c times the enrichment, with no W_H component
        assert abs(sol.psi_enrich[0] - c) <= 1e-8
        assert np.abs(sol.psi_wh).max() <= 1e-8

    def test_matrix_case(self, spec421, meshes421):
        K = np.array([[2.0, 0.5], [0.5, 3.0]])
        field = aq.CoefficientField(
            "const_matrix", {}, (1.8, 3.2),
            lambda y: np.broadcast_to(K, (y.shape[0], 2, 2)).copy(),
        )
        kbar = np.array([[2.0, 0.5], [0.5, 7.0]])  # same first column as K
        prob = aq.CoupledProblem(
            spec421, 0.5, 5, field, 0.5, bc_direction=1, mode="matrix", meshes=meshes421
        )
        sol = prob.solve(kbar)
        assert np.abs(sol.u_bar - prob.coarse.lift(1)).max() <= 1e-9
        assert np.abs(sol.psi_enrich - np.array([2.0, 0.5])).max() <= 1e-6


class TestSolveDiagnostics:
    def test_constraint_and_mean_gap(self, const3_problem):
        sol = const3_problem.solve(1.7)
        assert sol.constraint_residual <= 1e-9
        assert sol.mean_gap <= 1e-9 * 12.0
        assert sol.residual <= 1e-9

    def test_energy_below_linear_pair(self, spec421, meshes421):
        field = aq.coefficient_zoo("checkerboard", a=1.0, b=4.0)
        prob = aq.CoupledProblem(spec421, 0.5, 5, field, 0.5, meshes=meshes421)
        for kbar in (0.8, 2.0, 3.5):
            sol = prob.solve(kbar)
            assert prob.energy(sol.u_bar, sol.u_check, kbar) <= prob.linear_pair_energy(kbar) + 1e-12

    def test_non_spd_raises_singular_kkt(self, const3_problem):
        with pytest.raises(aq.SingularKkt):
            const3_problem.solve(-1.0)
        with pytest.raises(aq.SingularKkt):
            const3_problem.solve(np.array([[1.0, 3.0], [3.0, 1.0]]))

    def test_dump_csv(self, const3_problem):
        sol = const3_problem.solve(3.0)
        buf = io.StringIO()
        sol.dump_csv(buf, const3_problem)
        lines = buf.getvalue().splitlines()
        assert lines[0] == "node,x,y,value,field"
        n_expected = (
            const3_problem.coarse.n_dofs
            + const3_problem.fine.n_dofs
            + const3_problem.fine.dc_nodes.size
        )
        assert len(lines) - 1 == n_expected


class TestDegenerate:
    def test_minimizer_family(self, const3_problem):
        deg = const3_problem.solve_degenerate()
        # fine field is a constant
        assert np.abs(deg.u_check - deg.lam).max() == 0.0
        areas, grads, _ = fem.tri_geometry(const3_problem.fine_mesh)
        gu = np.einsum("tik,ti->tk", grads, deg.u_check[const3_problem.fine_mesh.triangles])
        assert np.abs(gu).max() == 0.0
        # zero energy in the fine model (up to stiffness-times-constant roundoff)
        e0 = const3_problem.energy(np.zeros(const3_problem.coarse.n_dofs), deg.u_check, 1.0)
        assert abs(e0) <= 1e-12

    def test_constraint_on_dc(self, const3_problem):
        deg = const3_problem.solve_degenerate()
        dc = const3_problem.coarse.dc_nodes
        assert np.abs(deg.u_bar[dc] - deg.lam).max() < 1e-12

    def test_boundary_data_kept(self, const3_problem, spec421):
        deg = const3_problem.solve_degenerate()
        g = const3_problem.coarse.gamma_nodes
        x1 = const3_problem.coarse.lift(1)
        assert np.abs(deg.u_bar[g] - x1[g]).max() == 0.0


class TestDerivatives:
    def test_scaling_linearity(self, spec421, meshes421):
        field = aq.coefficient_zoo("smooth_trig", base=2.0, amp=1.0)
        prob = aq.CoupledProblem(spec421, 0.5, 5, field, 0.5, meshes=meshes421)
        sol = prob.solve(2.0)
        d1 = prob.solve_derivative(sol, 1)
        doubled = prob._derivative_from(sol, sol.u_bar, 2.0, 1)
        assert np.allclose(doubled.u_bar, 2.0 * d1.u_bar, rtol=0, atol=1e-12)
        assert np.allclose(doubled.u_check, 2.0 * d1.u_check, rtol=0, atol=1e-12)

    @pytest.mark.parametrize("kbar", [0.9, 2.1, 3.7])
    def test_fd_consistency(self, spec421, meshes421, kbar):
        from arlequin.objective import eval_J

        field = aq.coefficient_zoo("checkerboard", a=1.0, b=4.0)
        prob = aq.CoupledProblem(spec421, 0.5, 5, field, 0.5, meshes=meshes421)
        ev = eval_J(prob, kbar, derivatives=2)
        d = 1e-4
        jp = eval_J(prob, kbar + d).J
        jm = eval_J(prob, kbar - d).J
        fd1 = (jp - jm) / (2 * d)
        fd2 = (jp - 2 * ev.J + jm) / d**2
        assert abs(ev.dJ - fd1) <= 1e-5 * max(abs(fd1), 1e-12)
        assert abs(ev.d2J - fd2) <= 1e-4 * max(abs(fd2), 1e-12)

    def test_matrix_mode_rejects_derivatives(self, spec421, meshes421):
        field = aq.coefficient_zoo("constant", c=2.0)
        prob = aq.CoupledProblem(
            spec421, 0.5, 5, field, 0.5, mode="matrix", meshes=meshes421
        )
        sol = prob.solve(2.0)
        with pytest.raises(ValueError):
            prob.solve_derivative(sol, 1)


def test_functional_wrapper(spec421, meshes421):
    field = aq.coefficient_zoo("constant", c=2.0)
    sol = aq.solve_coupled(2.0, field, 0.5, meshes421, bc_direction=1)
    assert np.abs(sol.u_bar - meshes421[0].vertices[:, 0]).max() <= 1e-9


def test_spec_recovered_from_meshes(meshes421, spec421):
    from arlequin.solver import _spec_from_meshes

    spec = _spec_from_meshes(meshes421[0], meshes421[1])
    assert (spec.L, spec.L_c, spec.L_f) == (spec421.L, spec421.L_c, spec421.L_f)
