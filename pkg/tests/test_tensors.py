import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from grushin_lab.chart import CartesianPoint, random_points
from grushin_lab.errors import DegenerateInput, DimensionMismatch, DimensionTooSmall, SingularMetric
from grushin_lab.metric import (
    GrushinG,
    curvature_fd,
    ricci_tensor_closed,
    riemann_tensor_closed,
    scalar_closed,
)
from grushin_lab.tensors import (
    gram_schmidt,
    kulkarni_nomizu,
    max_trace,
    orthonormal_frame,
    ricci_from_riemann,
    scalar_from_ricci,
    validate_symmetries,
    weyl_from_parts,
    weyl_tensor,
)

from conftest import DEFAULT

entries = st.floats(-2, 2, allow_nan=False)


def sym(n):
    return arrays(float, (n, n), elements=entries).map(lambda a: a + a.T)


def test_kn_hand_value():
    # h_ad s_bc + h_bc s_ad - h_ac s_bd - h_bd s_ac at (1,2,2,1), h = s = I_2
    G = kulkarni_nomizu(np.eye(2), np.eye(2))
    assert G[0, 1, 1, 0] == 2.0
    assert G[0, 1, 0, 1] == -2.0


def test_kn_zero_and_mismatch():
    assert not np.any(kulkarni_nomizu(np.zeros((3, 3)), np.eye(3)))
    with pytest.raises(DimensionMismatch):
        kulkarni_nomizu(np.eye(3), np.eye(4))


@given(sym(4), sym(4))
def test_kn_commutes_and_has_curvature_symmetries(h, s):
    A = kulkarni_nomizu(h, s)
    assert np.max(np.abs(A - kulkarni_nomizu(s, h))) <= 1e-14 * (1 + np.max(np.abs(A)))
    rep = validate_symmetries(A, tol=1e-14)
    assert rep.passed, str(rep)


@given(sym(3), sym(3), sym(3), st.floats(-3, 3))
def test_kn_bilinear(h1, h2, s, c):
    lhs = kulkarni_nomizu(h1 + c * h2, s)
    rhs = kulkarni_nomizu(h1, s) + c * kulkarni_nomizu(h2, s)
    assert np.allclose(lhs, rhs, atol=1e-12)


def test_ricci_and_scalar_of_zero():
    g = np.eye(4)
    assert not np.any(ricci_from_riemann(np.zeros((4,) * 4), g))
    assert scalar_from_ricci(np.zeros((4, 4)), g) == 0.0


def test_ricci_of_unit_sphere_form():
    # (g o g)(X,Y,X,Y) = -2 for orthonormal X, Y, so the unit sphere is -(1/2) g o g
    n = 5
    R = -0.5 * kulkarni_nomizu(np.eye(n), np.eye(n))
    assert np.allclose(ricci_from_riemann(R, np.eye(n)), (n - 1) * np.eye(n))


def test_singular_metric_rejected():
    g = np.diag([1.0, 0.0, 1.0])
    with pytest.raises(SingularMetric):
        ricci_from_riemann(np.zeros((3,) * 4), g)
    with pytest.raises(SingularMetric):
        scalar_from_ricci(np.eye(3), g)


def test_grushin_closed_riemann_contracts_to_closed_ricci(rng):
    g_field = GrushinG(DEFAULT)
    for pt in random_points(DEFAULT, 10, rng, rmin=0.5, rmax=2.0):
        g = g_field.at(pt.coords)
        ric = ricci_from_riemann(riemann_tensor_closed(DEFAULT, pt), g)
        ref = ricci_tensor_closed(DEFAULT, pt)
        assert np.max(np.abs(ric - ref)) <= 1e-10 * max(1.0, np.max(np.abs(ref)))


def test_scalar_default_instance_at_unit_radius():
    pt = CartesianPoint([1.0, 0, 0], [0.0])
    g = GrushinG(DEFAULT).at(pt.coords)
    ric = ricci_from_riemann(riemann_tensor_closed(DEFAULT, pt), g)
    oracle = -3 * 1 * 2 / 4  # -a(a+2)(p-2)(p-1)/(a+1)^2 at r = 1
    assert scalar_from_ricci(ric, g) == pytest.approx(oracle, abs=1e-12)
    _, _, _, scal_fd = curvature_fd(GrushinG(DEFAULT), pt)
    assert scal_fd == pytest.approx(oracle, rel=1e-5)


def test_weyl_of_space_form_vanishes():
    rng = np.random.default_rng(3)
    a = rng.normal(size=(5, 5))
    g = a @ a.T + 5 * np.eye(5)
    W = weyl_tensor(-0.7 * kulkarni_nomizu(g, g), g)
    assert np.max(np.abs(W)) <= 1e-10


def test_weyl_needs_dimension_four():
    with pytest.raises(DimensionTooSmall):
        weyl_from_parts(np.zeros((3,) * 4), np.zeros((3, 3)), 0.0, np.eye(3))


def test_weyl_sectional_default_instance():
    pt = CartesianPoint([1.0, 0, 0], [0.0])
    g = GrushinG(DEFAULT).at(pt.coords)
    W = weyl_from_parts(riemann_tensor_closed(DEFAULT, pt), ricci_tensor_closed(DEFAULT, pt),
                        scalar_closed(DEFAULT, 1.0), g)
    # x_2 and x_3 are sphere directions at x = (1,0,0); unit length is 1/2
    X, Y = np.array([0, 0.5, 0, 0]), np.array([0, 0, 0.5, 0])
    assert np.einsum("abcd,a,b,c,d->", W, X, Y, X, Y) == pytest.approx(-0.25, abs=1e-12)
    _, R_fd, _, _ = curvature_fd(GrushinG(DEFAULT), pt)
    W_fd = weyl_tensor(R_fd, g)
    assert np.einsum("abcd,a,b,c,d->", W_fd, X, Y, X, Y) == pytest.approx(-0.25, rel=1e-5)


def test_weyl_trace_free_on_curvature_data(rng):
    for pt in random_points(DEFAULT, 5, rng, rmin=0.5, rmax=2.0):
        g, R, _, _ = curvature_fd(GrushinG(DEFAULT), pt)
        W = weyl_tensor(R, g)
        assert max_trace(W, g) <= 1e-9 * np.max(np.abs(W))
        assert np.max(np.abs(ricci_from_riemann(W, g))) <= 1e-9 * np.max(np.abs(W))


@given(arrays(float, (6, 6), elements=entries))
def test_weyl_trace_free_on_random_algebraic_curvature(a):
    g = a @ a.T + 6 * np.eye(6)
    h = a + a.T
    R = kulkarni_nomizu(h, h) + kulkarni_nomizu(g, h)
    W = weyl_tensor(R, g)
    scale = max(np.max(np.abs(W)), 1e-300)
    assert max_trace(W, g) <= 1e-9 * max(scale, np.max(np.abs(R)))


def test_gram_schmidt_examples():
    out = gram_schmidt(np.eye(2), [[1.0, 0.0], [1.0, 1.0]])
    assert np.allclose(out, np.eye(2), atol=1e-15)
    Q = np.linalg.qr(np.random.default_rng(0).normal(size=(4, 4)))[0]
    assert np.allclose(gram_schmidt(np.eye(4), Q.T), Q.T, atol=1e-14)


def test_gram_schmidt_rank_deficient():
    with pytest.raises(DegenerateInput):
        gram_schmidt(np.eye(3), [[1.0, 2, 3], [2.0, 4, 6]])
    with pytest.raises(DegenerateInput):
        gram_schmidt(np.eye(2), [[0.0, 0.0]])


@given(arrays(float, (5, 5), elements=entries), arrays(float, (5, 5), elements=entries))
def test_gram_schmidt_orthonormal(a, v):
    g = a @ a.T + np.eye(5)
    v = v + 3 * np.eye(5)
    if np.linalg.cond(v) > 1e6:
        return
    E = gram_schmidt(g, v)
    assert np.max(np.abs(E @ g @ E.T - np.eye(5))) <= 1e-10


def test_orthonormal_frame_grushin():
    pt = CartesianPoint([0.3, -1.0, 0.5], [2.0])
    g = GrushinG(DEFAULT).at(pt.coords)
    E = orthonormal_frame(g)
    assert np.allclose(E @ g @ E.T, np.eye(4), atol=1e-12)


def test_validate_symmetries_zero_and_fault():
    assert validate_symmetries(np.zeros((4,) * 4)).passed
    R = kulkarni_nomizu(np.eye(4), np.eye(4))
    R[0, 1, 0, 1] += 1e-3 * np.max(np.abs(R))
    rep = validate_symmetries(R)
    assert not rep.passed
    assert rep.residuals["antisym_12"] == pytest.approx(1e-3, rel=1e-6)


def test_validate_symmetries_fd_pipeline(rng):
    for pt in random_points(DEFAULT, 4, rng, rmin=0.5, rmax=2.0):
        _, R, _, _ = curvature_fd(GrushinG(DEFAULT), pt)
        assert validate_symmetries(R).passed
