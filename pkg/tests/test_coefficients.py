import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import arlequin as aq


def test_constant_field():
    f = aq.coefficient_zoo("constant", c=3.0)
    pts = np.array([[0.1, 0.2], [5.7, -3.3]])
    k = aq.sample_k_eps(f, 0.37, pts)
    assert np.allclose(k, 3.0 * np.eye(2))


def test_smooth_trig_quarter_period():
    # sin(pi/2) = 1 at y = (0.25, 0.25); at (0.25, 0) the product form gives sin(0) = 0
    f = aq.coefficient_zoo("smooth_trig", base=2.0, amp=1.0)
    k = f.eval_matrix([[0.25, 0.25]])[0]
    assert np.allclose(k, 3.0 * np.eye(2))
    k0 = f.eval_matrix([[0.25, 0.0]])[0]
    assert np.allclose(k0, 2.0 * np.eye(2))


def test_custom_one_dimensional_sine_field():
    # ad-hoc field (2 + sin(2 pi y1)) I: value 3I at y = (0.25, 0) with eps = 1
    def ev(y):
        vals = 2.0 + np.sin(2.0 * np.pi * y[:, 0])
        out = np.zeros(y.shape + (2,))
        out[:, 0, 0] = vals
        out[:, 1, 1] = vals
        return out

    f = aq.CoefficientField("sine1d", {}, (1.0, 3.0), ev)
    k = aq.sample_k_eps(f, 1.0, [[0.25, 0.0]])[0]
    assert np.allclose(k, 3.0 * np.eye(2))


def test_checkerboard_declared_layout():
    # cell (0,0)-(0.5,0.5) carries a; diagonal neighbours match, side neighbours flip
    f = aq.coefficient_zoo("checkerboard", a=1.0, b=4.0)
    eps = 0.2
    val_base = aq.sample_k_eps(f, eps, [[0.1 * eps, 0.1 * eps]])[0, 0, 0]
    val_side = aq.sample_k_eps(f, eps, [[0.6 * eps, 0.1 * eps]])[0, 0, 0]
    val_diag = aq.sample_k_eps(f, eps, [[0.6 * eps, 0.6 * eps]])[0, 0, 0]
    assert val_base == 1.0
    assert val_side == 4.0
    assert val_diag == 1.0


def test_laminate_layout():
    f = aq.coefficient_zoo("laminate", a=1.0, b=4.0, direction=1)
    k = f.eval_matrix([[0.2, 0.9], [0.7, 0.1]])
    assert k[0, 0, 0] == 1.0 and k[1, 0, 0] == 4.0
    # constant along y2
    k2 = f.eval_matrix([[0.2, 0.3]])
    assert np.array_equal(k[0], k2[0])


def test_anisotropic_laminate_diag():
    f = aq.coefficient_zoo("anisotropic_laminate", a1=1.0, a2=4.0, b1=2.0, b2=3.0)
    k = f.eval_matrix([[0.1, 0.5], [0.8, 0.5]])
    assert np.allclose(k[0], np.diag([1.0, 2.0]))
    assert np.allclose(k[1], np.diag([4.0, 3.0]))


def test_unknown_coefficient():
    with pytest.raises(aq.UnknownCoefficient):
        aq.coefficient_zoo("gyroid")
    with pytest.raises(aq.UnknownCoefficient):
        aq.coefficient_zoo("smooth_trig", base=1.0, amp=2.0)  # not coercive


@pytest.mark.parametrize("name,params", [
    ("constant", {"c": 2.0}),
    ("laminate", {"a": 1.0, "b": 4.0}),
    ("checkerboard", {"a": 1.0, "b": 4.0}),
    ("smooth_trig", {"base": 2.0, "amp": 1.0}),
    ("anisotropic_laminate", {}),
])
def test_periodicity_exact_on_grid(name, params):
    # 64x64 sample grid; shifting by a period must reproduce values bitwise
    f = aq.coefficient_zoo(name, **params)
    g = np.linspace(0.0, 1.0, 65)[:-1]
    xx, yy = np.meshgrid(g, g)
    pts = np.column_stack([xx.ravel(), yy.ravel()])
    base = f.eval_matrix(pts)
    for shift in ((1.0, 0.0), (0.0, 1.0)):
        moved = f.eval_matrix(pts + np.asarray(shift))
        assert np.array_equal(base, moved)


@pytest.mark.parametrize("name,params", [
    ("laminate", {"a": 1.0, "b": 4.0}),
    ("checkerboard", {"a": 1.0, "b": 4.0}),
    ("smooth_trig", {"base": 2.0, "amp": 1.0}),
    ("anisotropic_laminate", {}),
])
def test_symmetry_and_bounds(name, params):
    f = aq.coefficient_zoo(name, **params)
    rng = np.random.default_rng(7)
    pts = rng.uniform(-3, 3, size=(500, 2))
    k = f.eval_matrix(pts)
    assert np.array_equal(k, np.swapaxes(k, 1, 2))
    ev = np.linalg.eigvalsh(k)
    c1, c2 = f.bounds
    assert (ev >= c1 - 1e-12).all() and (ev <= c2 + 1e-12).all()


@settings(max_examples=50, deadline=None)
@given(
    x=st.floats(-10, 10, allow_nan=False),
    y=st.floats(-10, 10, allow_nan=False),
    eps=st.floats(1e-3, 10.0, allow_nan=False),
)
def test_sample_k_eps_is_rescaled_field(x, y, eps):
    f = aq.coefficient_zoo("smooth_trig", base=2.0, amp=1.0)
    direct = f.eval_matrix([[x / eps, y / eps]])
    scaled = aq.sample_k_eps(f, eps, [[x, y]])
    assert np.allclose(direct, scaled, rtol=0, atol=1e-12)


def test_sample_k_eps_rejects_bad_eps():
    f = aq.coefficient_zoo("constant", c=1.0)
    with pytest.raises(ValueError):
        aq.sample_k_eps(f, 0.0, [[0.0, 0.0]])
