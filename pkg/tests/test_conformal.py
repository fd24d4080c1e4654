import numpy as np
import pytest
from hypothesis import given, strategies as st

from grushin_lab import conformal as cf
from grushin_lab.chart import (
    CartesianPoint,
    CylindricalPoint,
    GrushinParams,
    chart_pushforward,
    cylindrical_vector,
    homogeneous_norm,
    random_points,
    sphere_basis,
    to_cylindrical,
)
from grushin_lab.errors import (
    DimensionTooSmall,
    DomainViolation,
    FitFailed,
    InvalidInput,
    NonpositiveFactor,
)
from grushin_lab.metric import sphere_product, weyl_sectional_constant

from conftest import DEFAULT, SWEEP

seeds = st.integers(0, 2 ** 32 - 1)


def chain_of(*maps, params=DEFAULT):
    return cf.MapChain(list(maps), params)


def unit_sphere_vector(params, cyl, k=0):
    E = sphere_basis(cyl.theta)
    return cylindrical_vector(cyl, dtheta=E[:, k] / ((params.alpha + 1) * cyl.r))


# --- elementary maps ------------------------------------------------------------

def test_isometry_requires_orthogonal_blocks():
    with pytest.raises(InvalidInput):
        cf.Isometry(np.diag([1.0, 2.0, 1.0]), np.eye(1), np.zeros(1))
    with pytest.raises(InvalidInput):
        cf.Dilation(0.0)


def test_identity_chain():
    pt = CartesianPoint([0.3, -0.2, 1.0], [0.5])
    assert np.array_equal(chain_of().apply(pt).coords, pt.coords)


def test_inversion_fixes_unit_sphere(rng):
    for _ in range(10):
        x = rng.normal(size=3)
        x /= np.linalg.norm(x) * rng.uniform(1.0, 3.0)
        r2 = np.linalg.norm(x) ** 4
        y = np.array([np.sqrt(1 - r2)]) * rng.choice([-1, 1])
        pt = CartesianPoint(x, y)
        assert homogeneous_norm(pt, DEFAULT) == pytest.approx(1.0)
        assert np.allclose(cf.apply(chain_of(cf.Inversion()), pt).coords, pt.coords, atol=1e-12)


def test_inversion_origin_is_excluded():
    with pytest.raises(DomainViolation):
        chain_of(cf.Inversion()).apply(CartesianPoint([0.0, 0, 0], [0.0]))


@given(seeds)
def test_inversion_is_an_involution(seed):
    rng = np.random.default_rng(seed)
    for prm in SWEEP:
        pt = random_points(prm, 1, rng)[0]
        back = chain_of(cf.Inversion(), cf.Inversion(), params=prm).apply(pt)
        assert np.allclose(back.coords, pt.coords, atol=1e-12 * (1 + np.linalg.norm(pt.coords)))


def test_dilation_and_isometry_jacobians(rng):
    pt = CartesianPoint([0.3, -0.2, 1.0], [0.5])
    J = chain_of(cf.Dilation(2.0)).jacobian(pt)
    assert np.allclose(J, np.diag([2.0, 2, 2, 4]))
    A, B = cf.random_orthogonal(3, rng), -np.eye(1)
    J = chain_of(cf.Isometry(A, B, np.array([0.7]))).jacobian(pt)
    assert np.allclose(J[:3, :3], A) and np.allclose(J[3:, 3:], B) and not np.any(J[:3, 3:])


def test_inversion_jacobian_on_singular_set():
    pt = CartesianPoint([0.0, 0, 0], [2.0])
    J = chain_of(cf.Inversion()).jacobian(pt)
    assert np.allclose(J[:3, :3], 0.5 * np.eye(3), atol=1e-15)


def test_jacobian_matches_finite_differences(params, rng):
    for _ in range(5):
        chain, _ = cf.random_classification_chain(params, rng, s=-2)
        pt = random_points(params, 1, rng, rmin=0.5, rmax=2.0)[0]
        J = chain.jacobian(pt)
        assert np.max(np.abs(J - cf.jacobian_fd(chain, pt))) <= 1e-7 * max(1.0, np.max(np.abs(J)))


# --- Cauchy-Riemann ------------------------------------------------------------

def test_cr_examples():
    pt = CartesianPoint([0.6, 0.3, -0.5], [1.2])
    A = np.array([[0.0, 1, 0], [-1, 0, 0], [0, 0, 1]])
    u, res = cf.cr_residual(chain_of(cf.Isometry(A, np.eye(1), np.array([3.0]))), pt)
    assert u == pytest.approx(1.0, abs=1e-12) and res <= 1e-12
    u, res = cf.cr_residual(chain_of(cf.Dilation(1.7)), pt)
    assert u == pytest.approx(1.7 ** -2, rel=1e-12) and res <= 1e-12
    u, res = cf.cr_residual(chain_of(cf.Inversion()), pt)
    assert u == pytest.approx(homogeneous_norm(pt, DEFAULT) ** 4, rel=1e-10) and res <= 1e-8


def test_cr_residual_small_on_random_chains(params, rng):
    for pt in random_points(params, 20, rng, rmin=0.5, rmax=2.0):
        chain, _ = cf.random_classification_chain(params, rng)
        u, res = cf.cr_residual(chain, pt)
        assert res <= 1e-8
        assert u == pytest.approx(chain.factor(pt), rel=1e-8)


@given(seeds)
def test_factor_cocycle(seed):
    rng = np.random.default_rng(seed)
    prm = SWEEP[seed % len(SWEEP)]
    F, _ = cf.random_classification_chain(prm, rng)
    G, _ = cf.random_classification_chain(prm, rng)
    pt = random_points(prm, 1, rng, rmin=0.5, rmax=2.0)[0]
    u_fg = cf.cr_residual(G.then(F), pt)[0]
    u_f = cf.cr_residual(F, G.apply(pt))[0]
    u_g = cf.cr_residual(G, pt)[0]
    assert u_fg == pytest.approx(u_f * u_g, rel=1e-8)


def test_cr_hat_examples():
    inv = chain_of(cf.Inversion())
    u, res = cf.cr_residual_hat(inv, CartesianPoint([1.0, 0, 0], [0.0]))
    assert u == pytest.approx(1.0) and res <= 1e-12
    # on x = 0 with |y| = 2, a = 1: squared length ratio |y|^(-4/(a+1)) = 1/4
    u, res = cf.cr_residual_hat(inv, CartesianPoint([0.0, 0, 0], [2.0]))
    assert u ** -2 == pytest.approx(0.25, rel=1e-12) and res <= 1e-12
    u, res = cf.cr_residual_hat(chain_of(cf.Isometry(np.eye(3), np.eye(1), np.ones(1))),
                                CartesianPoint([0.2, 0, 1], [0.4]))
    assert u == pytest.approx(1.0) and res <= 1e-12
    with pytest.raises(DomainViolation):
        cf.cr_residual_hat(inv, CartesianPoint([0.0, 0, 0], [0.0]))


def test_cr_hat_inversion_factor_everywhere(params, rng):
    inv = chain_of(cf.Inversion(), params=params)
    pts = random_points(params, 5, rng) + [CartesianPoint(np.zeros(params.p), rng.normal(size=params.q))]
    for pt in pts:
        u, res = cf.cr_residual_hat(inv, pt)
        assert u == pytest.approx(homogeneous_norm(pt, params) ** 2, rel=1e-10) and res <= 1e-8


# --- cones ---------------------------------------------------------------------

def test_cone_examples():
    cyl = CylindricalPoint(1.0, [0.0], [1.0, 0, 0])
    dr = cylindrical_vector(cyl, dr=1.0)
    assert cf.cone_membership(DEFAULT, cyl, dr)[0]
    assert cf.cone_membership(DEFAULT, cyl, dr, mode="weyl_search")[0]
    mixed = dr + unit_sphere_vector(DEFAULT, cyl)
    assert not cf.cone_membership(DEFAULT, cyl, mixed)[0]
    member, wit = cf.cone_membership(DEFAULT, cyl, mixed, mode="weyl_search")
    assert not member and wit.value > 1e-3


def test_cone_p2_and_small_dimension():
    prm = GrushinParams(2, 2, 1.0)
    cyl = CylindricalPoint(1.0, [0.0, 0.0], [1.0, 0.0])
    X = cylindrical_vector(cyl, dr=1.0, dtheta=[0.0, 1.0])
    assert cf.cone_membership(prm, cyl, X)[0]
    small = GrushinParams(2, 1, 1.0)
    with pytest.raises(DimensionTooSmall):
        cf.cone_membership(small, CylindricalPoint(1.0, [0.0], [1.0, 0.0]),
                           cylindrical_vector(CylindricalPoint(1.0, [0.0], [1.0, 0.0]), dr=1.0))


def test_step1_witness_rejects_pure_vectors():
    mask = np.array([False, False, True, True])
    with pytest.raises(InvalidInput):
        cf.step1_witness(np.array([1.0, 0, 0, 0]), mask)


@pytest.mark.parametrize("prm", [SWEEP[0], SWEEP[2], GrushinParams(4, 2, 0.5)], ids=str)
def test_cone_modes_agree(prm):
    rng = np.random.default_rng(7)
    for k, pt in enumerate(random_points(prm, 24, rng, rmin=0.5, rmax=2.0)):
        cyl = to_cylindrical(pt, prm)
        hv = rng.normal(size=1 + prm.q)
        sv = sphere_basis(cyl.theta) @ rng.normal(size=prm.p - 1)
        kind = k % 3
        comps = np.concatenate([hv if kind != 1 else 0 * hv, sv if kind != 0 else 0 * sv])
        X = cylindrical_vector(cyl, dr=comps[0], dy=comps[1:1 + prm.q], dtheta=comps[1 + prm.q:])
        a, _ = cf.cone_membership(prm, cyl, X)
        b, _ = cf.cone_membership(prm, cyl, X, mode="weyl_search", trials=200, rng=rng)
        assert a == b == (kind != 2)


def test_cone_membership_on_sphere_product(rng):
    W = sphere_product(3, 2)
    for _ in range(6):
        z = rng.uniform(-1, 1, 5)
        for X in (np.r_[rng.normal(size=2), 0, 0, 0], np.r_[0, 0, rng.normal(size=3)], rng.normal(size=5)):
            a, _ = cf.cone_membership_warped(W, z, X)
            b, _ = cf.cone_membership_warped(W, z, X, mode="weyl_search", trials=200, rng=rng)
            assert a == b


def test_cone_invariance_patterns(rng):
    pt = CartesianPoint([0.8, 0.3, -0.4], [0.6])
    iso = chain_of(cf.Isometry(cf.random_orthogonal(3, rng), np.eye(1), np.array([1.0])))
    assert cf.cone_invariance_check(iso, pt)[0] == "SS-HH"
    pattern, resid, ok = cf.cone_invariance_check(chain_of(cf.Inversion()), pt)
    assert pattern == "SS-HH" and ok and resid <= 1e-8


def test_swap_pattern_only_for_equal_dimensions():
    # x = e1: sphere directions are x2.., horizontal ones are x1 and y
    prm = GrushinParams(3, 1, 1.0)
    pt = CartesianPoint([1.0, 0, 0], [0.0])
    J = np.zeros((4, 4))
    J[0, 1] = J[3, 2] = J[1, 0] = J[2, 3] = 1.0
    pattern, _, ok = cf.classify_pushforward(prm, pt, pt, J)
    assert pattern == "SH-HS" and ok
    prm = GrushinParams(4, 1, 1.0)
    pt = CartesianPoint([1.0, 0, 0, 0], [0.0])
    J = np.zeros((5, 5))
    J[0, 1] = J[4, 2] = J[0, 3] = J[1, 0] = J[2, 4] = 1.0
    pattern, _, ok = cf.classify_pushforward(prm, pt, pt, J)
    assert pattern == "SH-HS" and not ok


# --- Ricci preservation ----------------------------------------------------------

def test_ricci_preservation(params, rng):
    for pt in random_points(params, 10, rng, rmin=0.5, rmax=2.0):
        chain, _ = cf.random_classification_chain(params, rng)
        U, V = rng.normal(size=params.n), rng.normal(size=params.n)
        assert cf.ricci_preservation_check(chain, pt, U, V) <= 1e-8
    pt = random_points(params, 1, rng, rmin=0.5, rmax=2.0)[0]
    cyl = to_cylindrical(pt, params)
    X = chart_pushforward(unit_sphere_vector(params, cyl), "cartesian", params)
    assert cf.ricci_preservation_check(chain_of(cf.Inversion(), params=params), pt, X, X) <= 1e-8


def test_ricci_preservation_isometry_exact():
    pt = CartesianPoint([0.5, 0.2, -0.7], [0.1])
    iso = chain_of(cf.Isometry(np.eye(3)[[1, 0, 2]], np.eye(1), np.array([2.0])))
    U = np.array([0.0, 1.0, 0.5, 0.0])
    assert cf.ricci_preservation_check(iso, pt, U, U) <= 1e-12


def test_ricci_detects_nonconformal_map():
    stretch = cf.CustomMap(lambda z: np.r_[1.5 * z[0], z[1:]], "stretch")
    pt = CartesianPoint([0.6, 0.8, 0.0], [0.0])
    X = np.array([0.8, -0.6, 0, 0])
    assert cf.ricci_preservation_check(chain_of(stretch), pt, X, X) >= 1e-2


# --- conformal factor models ---------------------------------------------------------

def test_factor_model_parametrisation():
    m = cf.ConformalFactorModel.sphere(DEFAULT, 0.5, [1.0])
    assert m.kind == "sphere" and m.H == 1.0 and m.L == 0.0
    assert np.allclose(m.M, [-1.0]) and m.N == pytest.approx(0.5)
    assert m.trace_identity() == pytest.approx(0.0)
    assert m.a == pytest.approx(0.5) and np.allclose(m.b, [1.0])
    assert cf.ConformalFactorModel.constant(DEFAULT, 2.0).kind == "constant"


def test_factor_pde_examples():
    pt = CartesianPoint([0.7, 0.2, -0.5], [0.3])
    full, trace = cf.factor_pde_residual(cf.ConformalFactorModel.constant(DEFAULT, 3.0), pt)
    assert full == 0.0 and trace == 0.0
    full, trace = cf.factor_pde_residual(cf.ConformalFactorModel.sphere(DEFAULT, 0.5, [1.0]), pt)
    assert full <= 1e-8 and trace <= 1e-8
    bad = cf.ConformalFactorModel(DEFAULT, H=2.0, L=0.0, M=[0.0], N=1.0)
    _, trace = cf.factor_pde_residual(bad, CartesianPoint([1.0, 0, 0], [0.0]))
    # 2 u Lap u - n |grad u|^2 = n (2NH - |M|^2) = 16 at any point
    assert trace == pytest.approx(16.0, rel=1e-12) and trace >= 0.1
    with pytest.raises(NonpositiveFactor):
        cf.factor_pde_residual(cf.ConformalFactorModel.constant(DEFAULT, -1.0), pt)


def test_factor_pde_on_chain_factors(params, rng):
    chain, _ = cf.random_classification_chain(params, rng, s=-2)
    for pt in random_points(params, 3, rng, rmin=0.6, rmax=1.5):
        full, trace = cf.factor_pde_residual(None, pt, chain=chain)
        u = chain.factor(pt)
        assert full <= 1e-5 and trace <= 1e-5 * u


@given(seeds, st.sampled_from([0, -2]))
def test_factor_fit_recovers_chain_factor(seed, s):
    rng = np.random.default_rng(seed)
    prm = SWEEP[seed % len(SWEEP)]
    chain, truth = cf.random_classification_chain(prm, rng, s=s)
    pts = random_points(prm, 30, rng, rmin=0.5, rmax=2.0)
    fit = cf.fit_factor_model(pts, [cf.cr_residual(chain, z)[0] for z in pts], prm)
    assert fit.model.kind == ("constant" if s == 0 else "sphere")
    assert fit.rel_error <= 1e-7


# --- classification fit ----------------------------------------------------------------

def samples_of(chain, params, rng, m=None):
    m = m or 2 * (params.p ** 2 + params.q ** 2 + params.q + 3)
    pts = random_points(params, m, rng, rmin=0.5, rmax=2.0)
    return [(z, chain.apply(z)) for z in pts]


def test_fit_isometry(rng):
    A, B = cf.random_orthogonal(3, rng), cf.random_orthogonal(1, rng)
    iso = chain_of(cf.Isometry(A, B, np.zeros(1)))
    fit = cf.fit_classification(samples_of(iso, DEFAULT, rng), DEFAULT)
    assert fit.s == 0 and fit.t == pytest.approx(1.0, abs=1e-8)
    assert np.allclose(fit.b, 0) and np.allclose(fit.A, A, atol=1e-8) and np.allclose(fit.B, B, atol=1e-8)


def test_fit_inversion_chain(rng):
    A = cf.random_orthogonal(3, rng)
    chain = cf.classification_chain(DEFAULT, A=A, t=3.0, b=[1.0], s=-2)
    fit = cf.fit_classification(samples_of(chain, DEFAULT, rng), DEFAULT)
    assert fit.s == -2
    assert fit.t == pytest.approx(3.0, abs=1e-6) and fit.b == pytest.approx([1.0], abs=1e-6)
    assert fit.residual <= 1e-6
    pt = CartesianPoint([0.4, 0.1, 0.9], [-0.3])
    assert np.allclose(fit.chain.apply(pt).coords, chain.apply(pt).coords, atol=1e-6)


def test_fit_rejects_perturbed_map(rng):
    chain, _ = cf.random_classification_chain(DEFAULT, rng, s=-2)
    bad = [(z, CartesianPoint(w.x, w.y + 1e-2 * np.sin(z.x[0]))) for z, w in samples_of(chain, DEFAULT, rng)]
    with pytest.raises(FitFailed) as info:
        cf.fit_classification(bad, DEFAULT)
    assert info.value.residual > 1e-4


def test_fit_needs_enough_samples(rng):
    chain, _ = cf.random_classification_chain(DEFAULT, rng)
    with pytest.raises(InvalidInput):
        cf.fit_classification(samples_of(chain, DEFAULT, rng, m=5), DEFAULT)


@given(seeds)
def test_fit_random_chains(seed):
    rng = np.random.default_rng(seed)
    prm = SWEEP[seed % len(SWEEP)]
    chain, truth = cf.random_classification_chain(prm, rng)
    fit = cf.fit_classification(samples_of(chain, prm, rng), prm)
    assert fit.s == truth["s"] and fit.residual <= 1e-6
    assert fit.t == pytest.approx(truth["t"], abs=1e-6)


# --- Weyl sectional ratio and product structure -------------------------------------

def test_weyl_sectional_ratio_examples():
    cyl = CylindricalPoint(1.0, [0.0], [0.0, 0.0, 1.0])
    X, Y = unit_sphere_vector(DEFAULT, cyl, 0), unit_sphere_vector(DEFAULT, cyl, 1)
    assert cf.weyl_sectional_ratio(DEFAULT, cyl, X, Y) == pytest.approx(-0.25, rel=1e-12)
    cyl2 = CylindricalPoint(2.0, [0.0], [0.0, 0.0, 1.0])
    X2, Y2 = unit_sphere_vector(DEFAULT, cyl2, 0), unit_sphere_vector(DEFAULT, cyl2, 1)
    assert cf.weyl_sectional_ratio(DEFAULT, cyl2, X2, Y2) == pytest.approx(-0.0625, rel=1e-12)
    flat = GrushinParams(3, 1, 1e-9)
    assert abs(cf.weyl_sectional_ratio(flat, cyl, unit_sphere_vector(flat, cyl, 0),
                                       unit_sphere_vector(flat, cyl, 1))) <= 1e-8


def test_weyl_sectional_ratio_matches_constant(params, rng):
    for pt in random_points(params, 3, rng, rmin=0.5, rmax=2.0):
        cyl = to_cylindrical(pt, params)
        if params.p < 3:
            continue
        val = cf.weyl_sectional_ratio(params, cyl, unit_sphere_vector(params, cyl, 0),
                                      unit_sphere_vector(params, cyl, 1))
        assert val == pytest.approx(weyl_sectional_constant(params) / cyl.r ** 2, rel=1e-10)


def test_weyl_sectional_ratio_rejects_bad_input():
    cyl = CylindricalPoint(1.0, [0.0], [0.0, 0.0, 1.0])
    X = unit_sphere_vector(DEFAULT, cyl, 0)
    with pytest.raises(InvalidInput):
        cf.weyl_sectional_ratio(DEFAULT, cyl, X, X)
    with pytest.raises(InvalidInput):
        cf.weyl_sectional_ratio(DEFAULT, cyl, X, cylindrical_vector(cyl, dr=1.0))


def test_factor_is_product_on_grid(rng):
    chain, _ = cf.random_classification_chain(DEFAULT, rng, s=-2)
    rys = [(r, rng.uniform(-1, 1, 1)) for r in np.linspace(0.5, 2.0, 5)]
    thetas = []
    for _ in range(5):
        th = rng.normal(size=3)
        thetas.append(th / np.linalg.norm(th))
    assert cf.factor_product_residual(chain, rys, thetas) <= 1e-8
    twist = cf.CustomMap(lambda z: np.r_[z[:3] * (1 + 0.3 * z[0] * z[3]), z[3:]], "twist")
    assert cf.factor_product_residual(chain_of(twist), rys, thetas) >= 1e-3
