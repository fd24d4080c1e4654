"""Metric evaluators and curvature pipelines.

Two independent routes are provided for every curvature quantity:

* closed forms for the Grushin metric ``g`` (cylindrical warped structure), and
* a finite-difference pipeline that only ever sees metric components.

Metric fields are evaluated on batched coordinate arrays ``Z`` of shape
``(m, n)``; the coordinate chart is recorded in ``field.chart``.  Scalar fields
are callables on batched Cartesian coordinates ``Z = (x, y)`` returning shape ``(m,)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import _fd
from .chart import (
    SINGULAR_GUARD,
    CartesianPoint,
    CylindricalPoint,
    GrushinParams,
    TangentVector,
    sphere_basis,
    to_cartesian,
    to_cylindrical,
)
from .errors import InvalidInput, NonpositiveFactor, SingularChart, StepTooLarge
from .tensors import kulkarni_nomizu, ricci_from_riemann, scalar_from_ricci, weyl_from_parts

ScalarField = Callable[[np.ndarray], np.ndarray]

DEFAULT_REL_STEP = 1e-4


# ---------------------------------------------------------------------------
# metric fields
# ---------------------------------------------------------------------------

class MetricField:
    kind = "abstract"
    chart = "cartesian"
    dim: int

    def metric(self, Z: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def at(self, z) -> np.ndarray:
        return self.metric(np.asarray(z, dtype=float)[None, :])[0]

    def check_domain(self, z, h: float = 0.0) -> None:
        """Raise if z (or a stencil of radius h around it) leaves the admissible region."""

    def default_step(self, z) -> float:
        return DEFAULT_REL_STEP * (1.0 + float(np.linalg.norm(z)))


class _GrushinCartesian(MetricField):
    def __init__(self, params: GrushinParams):
        self.params = params
        self.dim = params.n

    def check_domain(self, z, h: float = 0.0) -> None:
        p = self.params.p
        xn = float(np.linalg.norm(z[:p]))
        if xn < SINGULAR_GUARD * (1.0 + np.linalg.norm(z[p:])):
            raise SingularChart("metric is singular on x = 0")
        if h > 0 and 2 * h * np.sqrt(p) >= 0.5 * xn:
            raise StepTooLarge(f"step {h:.3g} too large for |x| = {xn:.3g}")

    def _xnorm(self, Z):
        return np.linalg.norm(Z[..., :self.params.p], axis=-1)


class GrushinG(_GrushinCartesian):
    """g = (a+1)^2 |x|^(2a) |dx|^2 + |dy|^2 in Cartesian coordinates."""
    kind = "GrushinG"

    def metric(self, Z):
        p, a = self.params.p, self.params.alpha
        Z = np.asarray(Z, dtype=float)
        diag = np.ones(Z.shape[:-1] + (self.dim,))
        diag[..., :p] = ((a + 1) ** 2 * self._xnorm(Z) ** (2 * a))[..., None]
        return diag[..., :, None] * np.eye(self.dim)


class GrushinHat(_GrushinCartesian):
    """The control metric |dx|^2 + |dy|^2 / ((a+1)^2 |x|^(2a))."""
    kind = "GrushinHat"

    def metric(self, Z):
        p, a = self.params.p, self.params.alpha
        Z = np.asarray(Z, dtype=float)
        diag = np.ones(Z.shape[:-1] + (self.dim,))
        diag[..., p:] = (1.0 / ((a + 1) ** 2 * self._xnorm(Z) ** (2 * a)))[..., None]
        return diag[..., :, None] * np.eye(self.dim)


class Euclidean(MetricField):
    kind = "Euclidean"

    def __init__(self, dim: int):
        self.dim = dim

    def metric(self, Z):
        Z = np.asarray(Z, dtype=float)
        return np.broadcast_to(np.eye(self.dim), Z.shape[:-1] + (self.dim, self.dim)).copy()


class ConformalScaled(MetricField):
    """u^{-2} times a base metric; u is a positive scalar field on the same chart."""
    kind = "ConformalScaled"

    def __init__(self, base: MetricField, u: ScalarField):
        self.base = base
        self.u = u
        self.dim = base.dim
        self.chart = base.chart

    def metric(self, Z):
        uz = np.asarray(self.u(np.atleast_2d(Z)), dtype=float).reshape(np.shape(Z)[:-1])
        if np.any(uz <= 0):
            raise NonpositiveFactor("conformal factor must be positive")
        return uz[..., None, None] ** -2 * self.base.metric(Z)

    def check_domain(self, z, h: float = 0.0) -> None:
        self.base.check_domain(z, h)

    def default_step(self, z):
        return self.base.default_step(z)


def _stereo_factor(S):
    return 4.0 / (1.0 + np.sum(S * S, axis=-1)) ** 2


@dataclass
class GenericWarped(MetricField):
    """Warped product H x_w S^k with a Euclidean base H = R^base_dim.

    Coordinates are ``(h, s)``: ``h`` in the base and ``s`` stereographic
    coordinates on the unit sphere, g_S = 4 |ds|^2 / (1 + |s|^2)^2.
    ``w``, ``grad_w`` and ``hess_w`` act on a single base point ``h``.
    """
    base_dim: int
    fiber_dim: int
    w: Callable
    grad_w: Callable
    hess_w: Callable
    label: str = "warped"
    kind = "GenericWarped"
    chart = "warped"

    def __post_init__(self):
        self.dim = self.base_dim + self.fiber_dim

    def metric(self, Z):
        Z = np.asarray(Z, dtype=float)
        H, S = Z[..., :self.base_dim], Z[..., self.base_dim:]
        wv = np.apply_along_axis(lambda h: float(self.w(h)), -1, H) if H.ndim > 1 else np.asarray(self.w(H))
        diag = np.ones(Z.shape[:-1] + (self.dim,))
        diag[..., self.base_dim:] = (wv ** 2 * _stereo_factor(S))[..., None]
        return diag[..., :, None] * np.eye(self.dim)

    def check_domain(self, z, h: float = 0.0) -> None:
        wz = float(self.w(np.asarray(z)[:self.base_dim]))
        if not wz > 0:
            raise SingularChart("warping function must be positive")


def grushin_warped(params: GrushinParams) -> GenericWarped:
    """The Grushin metric g written as (r, y) x_w S^{p-1} with w = (a+1) r."""
    a1 = params.alpha + 1.0
    base_dim = 1 + params.q

    def grad(h):
        out = np.zeros(base_dim)
        out[0] = a1
        return out

    return GenericWarped(base_dim, params.p - 1, lambda h: a1 * h[0], grad,
                         lambda h: np.zeros((base_dim, base_dim)), label="grushin")


def sphere_product(k: int, m: int) -> GenericWarped:
    """S^k x R^m as a warped product with w = 1 (base R^m listed first)."""
    return GenericWarped(m, k, lambda h: 1.0, lambda h: np.zeros(m), lambda h: np.zeros((m, m)),
                         label="sphere_product")


# ---------------------------------------------------------------------------
# chart helpers for the cylindrical model
# ---------------------------------------------------------------------------

def inverse_stereographic(S: np.ndarray, theta0: np.ndarray, basis: np.ndarray) -> np.ndarray:
    """Points of S^{p-1} from stereographic coordinates centred at theta0 (s = 0 -> theta0)."""
    v = S @ basis.T
    n2 = np.sum(S * S, axis=-1)[..., None]
    return (2 * v + (1 - n2) * theta0) / (1 + n2)


def cylindrical_coords(pt: CylindricalPoint) -> np.ndarray:
    """Warped-chart coordinates (r, y, s = 0) of a cylindrical point."""
    return np.concatenate([[pt.r], pt.y, np.zeros(pt.theta.size - 1)])


def ambient_to_chart(v: TangentVector) -> np.ndarray:
    """Ambient cylindrical components -> warped-chart components at s = 0."""
    E = sphere_basis(v.base.theta)
    return np.concatenate([[v.dr], v.dy, 0.5 * (E.T @ v.dtheta)])


def chart_to_ambient(base: CylindricalPoint, c: np.ndarray) -> TangentVector:
    E = sphere_basis(base.theta)
    q = base.y.size
    return TangentVector(base, np.concatenate([c[:1 + q], 2.0 * (E @ c[1 + q:])]))


def cylindrical_scalar(u: ScalarField, pt: CylindricalPoint, params: GrushinParams):
    """Pull a Cartesian scalar field back to the warped chart anchored at ``pt``."""
    E = sphere_basis(pt.theta)
    beta = 1.0 / (params.alpha + 1.0)
    q = params.q

    def f(C):
        C = np.atleast_2d(C)
        r = C[:, 0]
        th = inverse_stereographic(C[:, 1 + q:], pt.theta, E)
        X = (r ** beta)[:, None] * th
        return u(np.concatenate([X, C[:, 1:1 + q]], axis=1))

    return f


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

def metric_at(M: MetricField, pt) -> np.ndarray:
    """Components of the metric at a point.

    Cartesian points give the n x n Cartesian form.  Cylindrical points (Grushin
    kinds only) give the ambient (1 + q + p)-square form acting on
    ``(dr, dy, dtheta)`` components.
    """
    if isinstance(pt, CylindricalPoint):
        if not isinstance(M, _GrushinCartesian):
            raise InvalidInput("cylindrical evaluation is only defined for the Grushin metrics")
        prm = M.params
        a1 = prm.alpha + 1.0
        diag = np.concatenate([[1.0], np.ones(prm.q), np.full(prm.p, a1 ** 2 * pt.r ** 2)])
        if isinstance(M, GrushinHat):
            diag = diag / (a1 ** 2 * pt.r ** (2 * prm.alpha / a1))
        return np.diag(diag)
    z = pt.coords if isinstance(pt, CartesianPoint) else np.asarray(pt, dtype=float)
    M.check_domain(z)
    return M.at(z)


def inner(M: MetricField, pt, U, V) -> float:
    u = U.components if isinstance(U, TangentVector) else np.asarray(U)
    v = V.components if isinstance(V, TangentVector) else np.asarray(V)
    return float(u @ metric_at(M, pt) @ v)


def christoffel_closed(M: MetricField, pt, chart: str = "cartesian") -> np.ndarray:
    """Closed-form Christoffel symbols, ``G[k, i, j] = Gamma^k_ij``.

    ``chart="cartesian"``: Grushin g or g-hat in (x, y).
    ``chart="cylindrical"``: g in the warped chart (r, y, s) at s = 0 anchored at
    the point's theta.
    """
    prm = M.params
    p, n, a = prm.p, prm.n, prm.alpha
    if chart == "cylindrical":
        if not isinstance(M, GrushinG):
            raise InvalidInput("cylindrical closed form is implemented for g only")
        cyl = pt if isinstance(pt, CylindricalPoint) else to_cylindrical(pt, prm)
        r = cyl.r
        G = np.zeros((n, n, n))
        s0 = 1 + prm.q
        for k in range(s0, n):
            G[k, 0, k] = G[k, k, 0] = 1.0 / r
            G[0, k, k] = -4.0 * (a + 1) ** 2 * r
        return G
    cart = pt if isinstance(pt, CartesianPoint) else to_cartesian(pt, prm)
    M.check_domain(cart.coords)
    x = cart.x
    x2 = float(x @ x)
    G = np.zeros((n, n, n))
    I = np.eye(p)
    if isinstance(M, GrushinG):
        G[:p, :p, :p] = a / x2 * (np.einsum("ik,j->kij", I, x) + np.einsum("jk,i->kij", I, x)
                                  - np.einsum("ij,k->kij", I, x))
    elif isinstance(M, GrushinHat):
        c = 1.0 / ((a + 1) ** 2 * x2 ** a)
        dc = -2 * a * x / x2 * c
        for lam in range(p, n):
            G[:p, lam, lam] = -0.5 * dc
            G[lam, :p, lam] = G[lam, lam, :p] = -a * x / x2
    else:
        raise InvalidInput(f"no closed-form Christoffel symbols for {M.kind}")
    return G


def _metric_derivatives(M: MetricField, z, step, order, second):
    z = np.asarray(z, dtype=float)
    h = M.default_step(z) if step is None else float(step)
    M.check_domain(z, h * (2 if order == 4 else 1))
    return _fd.derivatives(M.metric, z, h, order=order, second=second)


def _christoffel_from(g, dg):
    ginv = np.linalg.inv(g)
    # dg[m, i, j] = d_m g_ij ; Gamma_{l,ij} = (d_i g_jl + d_j g_il - d_l g_ij) / 2
    low = 0.5 * (np.einsum("ijl->lij", dg) + np.einsum("jil->lij", dg) - dg)
    return np.einsum("kl,lij->kij", ginv, low), low


def christoffel_fd(M: MetricField, z, step: float | None = None, order: int = 2) -> np.ndarray:
    """Levi-Civita symbols from central differences of the metric components."""
    if isinstance(z, CartesianPoint):
        z = z.coords
    g, dg, _ = _metric_derivatives(M, z, step, order, second=False)
    G, _ = _christoffel_from(g, dg)
    return 0.5 * (G + G.transpose(0, 2, 1))


def riemann_fd(M: MetricField, z, step: float | None = None, order: int = 4) -> np.ndarray:
    """Riemann tensor R[a,b,c,d] from metric components only.

    Uses the all-lower coordinate formula, so the curvature symmetries hold to
    round-off whatever the truncation error.
    """
    if isinstance(z, CartesianPoint):
        z = z.coords
    if step is None:
        step = 10 * M.default_step(np.asarray(z, dtype=float))
    g, dg, ddg = _metric_derivatives(M, z, step, order, second=True)
    G, low = _christoffel_from(g, dg)
    # ddg[m, k, i, j] = d_m d_k g_ij
    second = 0.5 * (np.einsum("bcad->abcd", ddg) + np.einsum("adbc->abcd", ddg)
                    - np.einsum("bdac->abcd", ddg) - np.einsum("acbd->abcd", ddg))
    # g_ef (G^e_bc G^f_ad - G^e_bd G^f_ac) with G_f,ad = g_fe G^e_ad
    quad = np.einsum("fbc,fad->abcd", low, G) - np.einsum("fbd,fac->abcd", low, G)
    return second + quad


def curvature_fd(M: MetricField, z, step=None, order: int = 4):
    """(g, Riemann, Ricci, Scal) at z from the finite-difference pipeline."""
    if isinstance(z, CartesianPoint):
        z = z.coords
    R = riemann_fd(M, z, step, order)
    g = M.at(np.asarray(z, dtype=float))
    ric = ricci_from_riemann(R, g)
    return g, R, ric, scalar_from_ricci(ric, g)


# ---------------------------------------------------------------------------
# closed-form curvature of g
# ---------------------------------------------------------------------------

def curvature_constant(params: GrushinParams) -> float:
    """a(a+2)/(a+1)^2; the sphere-plane sectional curvature of g is minus this over r^2."""
    a = params.alpha
    return a * (a + 2) / (a + 1) ** 2


def _sphere_inner(params, pt: CylindricalPoint, U: TangentVector, V: TangentVector) -> float:
    return (params.alpha + 1) ** 2 * pt.r ** 2 * float(U.dtheta @ V.dtheta)


def riemann_closed(params: GrushinParams, pt: CylindricalPoint, U, V, X, Y) -> float:
    """R(U, V, X, Y) of g from the warped-product formula; only sphere parts contribute."""
    k = curvature_constant(params) / pt.r ** 2
    s = lambda A, B: _sphere_inner(params, pt, A, B)
    return -k * (s(U, X) * s(V, Y) - s(U, Y) * s(V, X))


def ricci_scal_closed(params: GrushinParams, pt: CylindricalPoint, U, V) -> tuple[float, float]:
    k = curvature_constant(params) / pt.r ** 2
    p = params.p
    return -k * (p - 2) * _sphere_inner(params, pt, U, V), scalar_closed(params, pt.r)


def scalar_closed(params: GrushinParams, r: float) -> float:
    p = params.p
    return -curvature_constant(params) * (p - 2) * (p - 1) / r ** 2


def _sphere_form_cartesian(params: GrushinParams, pt: CartesianPoint) -> tuple[np.ndarray, float]:
    """Bilinear form (U, V) -> g(U_S, V_S) in Cartesian components, and r."""
    p, n, a = params.p, params.n, params.alpha
    rho = pt.xnorm
    th = pt.x / rho
    S = np.zeros((n, n))
    S[:p, :p] = (a + 1) ** 2 * rho ** (2 * a) * (np.eye(p) - np.outer(th, th))
    return S, rho ** (a + 1)


def riemann_tensor_closed(params: GrushinParams, pt: CartesianPoint) -> np.ndarray:
    """Full Cartesian Riemann tensor of g built from the closed form."""
    if not pt.in_m0():
        raise SingularChart("curvature is unbounded on x = 0")
    S, r = _sphere_form_cartesian(params, pt)
    k = curvature_constant(params) / r ** 2
    return -k * (np.einsum("ac,bd->abcd", S, S) - np.einsum("ad,bc->abcd", S, S))


def ricci_tensor_closed(params: GrushinParams, pt: CartesianPoint) -> np.ndarray:
    S, r = _sphere_form_cartesian(params, pt)
    return -curvature_constant(params) * (params.p - 2) / r ** 2 * S


def weyl_tensor_closed(params: GrushinParams, pt: CartesianPoint) -> np.ndarray:
    g = GrushinG(params).at(pt.coords)
    R = riemann_tensor_closed(params, pt)
    ric = ricci_tensor_closed(params, pt)
    r = pt.xnorm ** (params.alpha + 1)
    return weyl_from_parts(R, ric, scalar_closed(params, r), g)


def weyl_sectional_constant(params: GrushinParams) -> float:
    """C0 = -(q^2+q)/((n-1)(n-2)) * a(a+2)/(a+1)^2."""
    n, q = params.n, params.q
    return -(q * q + q) / ((n - 1) * (n - 2)) * curvature_constant(params)


# ---------------------------------------------------------------------------
# warped products
# ---------------------------------------------------------------------------

def warped_riemann_tensor(W: GenericWarped, z) -> np.ndarray:
    """Riemann tensor of a warped product (Euclidean base) from the warped-product formulas."""
    z = np.asarray(z, dtype=float)
    W.check_domain(z)
    m, k = W.base_dim, W.fiber_dim
    n = m + k
    h, s = z[:m], z[m:]
    w = float(W.w(h))
    dw = np.asarray(W.grad_w(h), dtype=float)
    hw = np.asarray(W.hess_w(h), dtype=float)
    gs = np.zeros((n, n))
    gs[m:, m:] = _stereo_factor(s) * np.eye(k)
    gv = w * w * gs                          # g restricted to vertical vectors
    R = np.zeros((n, n, n, n))
    # all vertical: w^2 R_S + w^-2 |grad w|^2 {g(X,Z)g(Y,V) - g(Y,Z)g(X,V)} at (V, Z, X, Y)
    sphere = np.einsum("ac,bd->abcd", gs, gs) - np.einsum("ad,bc->abcd", gs, gs)
    warp = np.einsum("cb,da->abcd", gv, gv) - np.einsum("db,ca->abcd", gv, gv)
    R += w * w * sphere + (dw @ dw) / w ** 2 * warp
    # mixed: R(Y, B, A, X) = w^-1 Hess w(A, B) g(X, Y), plus its symmetric images
    hfull = np.zeros((n, n))
    hfull[:m, :m] = hw
    mixed = np.einsum("cb,ad->abcd", hfull, gv) / w      # (v, h, h, v)
    R += mixed
    R += mixed.transpose(1, 0, 3, 2)                     # (h, v, v, h)
    R -= mixed.transpose(1, 0, 2, 3)                     # (h, v, h, v)
    R -= mixed.transpose(0, 1, 3, 2)                     # (v, h, v, h)
    return R


def warped_curvature_closed(W: GenericWarped, z, U, V, X, Y) -> float:
    R = warped_riemann_tensor(W, z)
    return float(np.einsum("abcd,a,b,c,d->", R, U, V, X, Y))


# ---------------------------------------------------------------------------
# Hessians, Laplacians, the Grushin operator
# ---------------------------------------------------------------------------

def hessian_laplacian_warped(u: ScalarField, pt: CylindricalPoint, params: GrushinParams,
                             directions=None, step: float = 1e-3):
    """Hessian and Laplacian of u for g via the warped-product connection.

    Returns ``(H, lap)`` where ``H[i, j] = Hess u(d_i, d_j)`` for the given
    cylindrical tangent vectors (default: the chart basis ``d_r, d_y, d_s``).
    """
    q, a1 = params.q, params.alpha + 1.0
    f = cylindrical_scalar(u, pt, params)
    c0 = cylindrical_coords(pt)
    h = step * (1.0 + pt.r)
    if 4 * h >= pt.r:
        raise StepTooLarge(f"step {h:.3g} too large for r = {pt.r:.3g}")
    _, grad, hess = _fd.derivatives(f, c0, h, order=4)
    r = pt.r
    n = c0.size
    sl = slice(1 + q, n)
    H = hess.copy()
    H[0, sl] -= grad[sl] / r
    H[sl, 0] -= grad[sl] / r
    gss = a1 ** 2 * r ** 2 * 4.0
    H[sl, sl] += grad[0] / r * gss * np.eye(n - 1 - q)
    lap = (hess[0, 0] + (params.p - 1) / r * grad[0] + np.trace(hess[1:1 + q, 1:1 + q])
           + 0.25 * np.trace(hess[sl, sl]) / (a1 ** 2 * r ** 2))
    if directions is None:
        return H, float(lap)
    D = np.array([ambient_to_chart(v) for v in directions])
    return D @ H @ D.T, float(lap)


def hessian_cartesian_fd(u: ScalarField, M: MetricField, z, step: float = 1e-3) -> np.ndarray:
    """Coordinate-free Hessian d_i d_j u - Gamma^k_ij d_k u with finite-difference Gamma."""
    z = np.asarray(z, dtype=float)
    h = step * (1.0 + np.linalg.norm(z))
    _, grad, hess = _fd.derivatives(u, z, h, order=4)
    G = christoffel_fd(M, z, order=4, step=h)
    return hess - np.einsum("kij,k->ij", G, grad)


def grushin_laplacian(u: ScalarField, pt: CartesianPoint, params: GrushinParams,
                      step: float = 1e-2, order: int = 6) -> float:
    """Delta_a u = Delta_x u + (a+1)^2 |x|^(2a) Delta_y u (defined on all of M)."""
    z = pt.coords
    h = step * max(1e-2, float(np.linalg.norm(z)))
    d2 = _fd.second_diagonal(u, z, h, order=order)
    p = params.p
    wy = (params.alpha + 1) ** 2 * pt.xnorm ** (2 * params.alpha) if params.alpha > 0 else 1.0
    return float(np.sum(d2[:p]) + wy * np.sum(d2[p:]))


def gradient_and_hessian(u: ScalarField, z, step: float = 1e-3):
    z = np.asarray(z, dtype=float)
    h = step * (1.0 + np.linalg.norm(z))
    f0, grad, hess = _fd.derivatives(u, z, h, order=4)
    return float(np.squeeze(f0)), grad, hess


def conformal_ricci_rhs(base: GrushinG, u: ScalarField, pt: CartesianPoint, U=None, V=None,
                        derivs=None):
    """Ricci of u^{-2} g from the conformal-change formula.

    ``derivs`` may supply ``(u, grad, hess)`` in Cartesian coordinates; otherwise
    they are taken by finite differences.  Returns the full tensor when ``U`` is None.
    """
    prm = base.params
    n = prm.n
    z = pt.coords
    uval, du, ddu = derivs if derivs is not None else gradient_and_hessian(u, z)
    if uval <= 0:
        raise NonpositiveFactor("conformal factor must be positive")
    g = base.at(z)
    ginv = np.linalg.inv(g)
    G = christoffel_closed(base, pt)
    hess = ddu - np.einsum("kij,k->ij", G, du)
    grad2 = float(du @ ginv @ du)
    lap = float(np.einsum("ij,ij->", ginv, hess))
    ric = (ricci_tensor_closed(prm, pt) + (n - 2) / uval * hess
           - ((n - 1) * grad2 - uval * lap) / uval ** 2 * g)
    if U is None:
        return ric
    Uc = U.components if isinstance(U, TangentVector) else np.asarray(U)
    Vc = V.components if isinstance(V, TangentVector) else np.asarray(V)
    return float(Uc @ ric @ Vc)


def kn_identity(n: int) -> np.ndarray:
    """g o g for the Euclidean metric; handy constant-curvature model."""
    return kulkarni_nomizu(np.eye(n), np.eye(n))
