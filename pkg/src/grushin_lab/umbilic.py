"""Level-set hypersurfaces: normals, shape operators, umbilicity and the A1 / A2 / B families."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import _fd
from .chart import CartesianPoint, CylindricalPoint, GrushinParams, TangentVector, chart_pushforward, to_cartesian, to_cylindrical
from .conformal import MapChain, cone_membership, frame_components, step1_witness
from .errors import (
    ClassificationFailed,
    DegenerateGradient,
    DimensionTooSmall,
    InvalidInput,
    PreconditionViolation,
)
from .metric import GrushinG, MetricField, christoffel_closed, riemann_tensor_closed
from .tensors import gram_schmidt

ON_SURFACE_TOL = 1e-10
UMBILIC_FLOOR = 1.0


@dataclass(frozen=True)
class HypersurfaceSpec:
    """Zero set of F in Cartesian coordinates; ``orientation`` flips the normal."""
    F: Callable[[np.ndarray], float]
    params: GrushinParams
    grad: Callable[[np.ndarray], np.ndarray] | None = None
    hess: Callable[[np.ndarray], np.ndarray] | None = None
    orientation: int = 1
    label: str = "surface"

    def derivatives(self, z):
        z = np.asarray(z, dtype=float)
        if self.grad is not None and self.hess is not None:
            return float(self.F(z)), self.grad(z), self.hess(z)
        f = lambda Z: np.array([self.F(row) for row in Z])
        h = 1e-3 * (1 + np.linalg.norm(z))
        return _fd.derivatives(f, z, h, order=4)


# ---------------------------------------------------------------------------
# families
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class A1:
    """Homogeneous sphere |x|^(2(a+1)) + |y - b|^2 = c^2."""
    b: np.ndarray
    c: float

    def __post_init__(self):
        object.__setattr__(self, "b", np.atleast_1d(np.asarray(self.b, dtype=float)))
        if not self.c > 0:
            raise InvalidInput("A1 radius must be positive")


@dataclass(frozen=True)
class A2:
    """Plane <a, y> = c."""
    a: np.ndarray
    c: float

    def __post_init__(self):
        a = np.atleast_1d(np.asarray(self.a, dtype=float))
        na = np.linalg.norm(a)
        if na == 0:
            raise InvalidInput("A2 normal must be nonzero")
        object.__setattr__(self, "a", a / na)
        object.__setattr__(self, "c", float(self.c) / na)


@dataclass(frozen=True)
class B:
    """Plane <a, x> = 0 through the singular set."""
    a: np.ndarray

    def __post_init__(self):
        a = np.atleast_1d(np.asarray(self.a, dtype=float))
        na = np.linalg.norm(a)
        if na == 0:
            raise InvalidInput("B normal must be nonzero")
        object.__setattr__(self, "a", a / na)


SurfaceFamily = A1 | A2 | B


def surface_of(family, params: GrushinParams, orientation: int | None = None) -> HypersurfaceSpec:
    """Level function with closed-form derivatives.  A1 defaults to the inward normal."""
    p, q, a = params.p, params.q, params.alpha
    a1 = a + 1
    if isinstance(family, A1):
        if family.b.size != q:
            raise InvalidInput("A1 centre must have length q")
        bb, c = family.b, family.c

        def F(z):
            return np.linalg.norm(z[:p]) ** (2 * a1) + np.sum((z[p:] - bb) ** 2) - c ** 2

        def grad(z):
            x, xn = z[:p], np.linalg.norm(z[:p])
            return np.concatenate([2 * a1 * xn ** (2 * a) * x, 2 * (z[p:] - bb)])

        def hess(z):
            x, xn = z[:p], np.linalg.norm(z[:p])
            H = np.zeros((p + q, p + q))
            H[:p, :p] = 2 * a1 * (xn ** (2 * a) * np.eye(p) + 2 * a * xn ** (2 * a - 2) * np.outer(x, x))
            H[p:, p:] = 2 * np.eye(q)
            return H

        return HypersurfaceSpec(F, params, grad, hess, -1 if orientation is None else orientation, "A1")
    if isinstance(family, A2):
        if family.a.size != q:
            raise InvalidInput("A2 normal must have length q")
        g = np.concatenate([np.zeros(p), family.a])
        return HypersurfaceSpec(lambda z: float(g @ z) - family.c, params, lambda z: g,
                                lambda z: np.zeros((p + q, p + q)), orientation or 1, "A2")
    if isinstance(family, B):
        if family.a.size != p:
            raise InvalidInput("B normal must have length p")
        g = np.concatenate([family.a, np.zeros(q)])
        return HypersurfaceSpec(lambda z: float(g @ z), params, lambda z: g,
                                lambda z: np.zeros((p + q, p + q)), orientation or 1, "B")
    raise InvalidInput(f"unknown family {family!r}")


def pullback_spec(spec: HypersurfaceSpec, chain: MapChain) -> HypersurfaceSpec:
    """{z : F(chain(z)) = 0}; for an involution such as the inversion this is the image."""
    p = spec.params.p
    F = lambda z: spec.F(chain.apply(CartesianPoint.from_coords(z, p)).coords)
    return HypersurfaceSpec(F, spec.params, None, None, spec.orientation, f"{spec.label}*")


def sample_surface(family, params: GrushinParams, count: int, rng: np.random.Generator,
                   box: float = 2.0, min_x: float = 0.1) -> list[CartesianPoint]:
    """Seeded on-surface points kept away from x = 0."""
    p, q, a1 = params.p, params.q, params.alpha + 1
    pts = []
    while len(pts) < count:
        if isinstance(family, A1):
            th = rng.standard_normal(p)
            th /= np.linalg.norm(th)
            w = rng.standard_normal(q + 1)
            w /= np.linalg.norm(w)
            r = family.c * abs(w[0])
            pt = to_cartesian(CylindricalPoint(max(r, 1e-300), family.b + family.c * w[1:], th), params)
        elif isinstance(family, A2):
            x = rng.uniform(-box, box, p)
            y = rng.uniform(-box, box, q)
            y += (family.c - family.a @ y) * family.a
            pt = CartesianPoint(x, y)
        else:
            x = rng.uniform(-box, box, p)
            x -= (family.a @ x) * family.a
            pt = CartesianPoint(x, rng.uniform(-box, box, q))
        if pt.xnorm >= min_x:
            pts.append(pt)
    return pts


# ---------------------------------------------------------------------------
# normals and shape operator
# ---------------------------------------------------------------------------

def _check_on_surface(spec: HypersurfaceSpec, z, dF):
    val = spec.F(z)
    if abs(val) > ON_SURFACE_TOL * max(1.0, np.linalg.norm(dF) * (1 + np.linalg.norm(z))):
        raise InvalidInput(f"point is not on the surface (F = {val:.3g})")


def _normal_data(spec, pt: CartesianPoint, metric: MetricField):
    z = pt.coords
    _, dF, ddF = spec.derivatives(z)
    _check_on_surface(spec, z, dF)
    g = metric.at(z)
    ginv = np.linalg.inv(g)
    G = ginv @ dF
    nG2 = float(dF @ G)
    if not nG2 > 0 or np.sqrt(nG2) <= 1e-12 * max(1.0, np.linalg.norm(dF)):
        raise DegenerateGradient("level function has vanishing gradient")
    return z, dF, ddF, g, ginv, G, np.sqrt(nG2)


def unit_normal(spec: HypersurfaceSpec, pt: CartesianPoint, metric: MetricField | None = None) -> TangentVector:
    metric = GrushinG(spec.params) if metric is None else metric
    *_, G, nG = _normal_data(spec, pt, metric)
    return TangentVector(pt, spec.orientation * G / nG)


def tangent_frame(g: np.ndarray, N: np.ndarray) -> np.ndarray:
    """g-orthonormal basis (rows) of the g-orthogonal complement of a unit vector N."""
    n = g.shape[0]
    cands = np.eye(n) - np.outer(np.eye(n) @ g @ N, N)     # e_i - g(e_i, N) N
    order = np.argsort(np.abs(N @ g))                       # drop the direction most aligned with N
    out = gram_schmidt(g, cands[np.sort(order[:n - 1])], tol=1e-8)
    return out


@dataclass
class ShapeReport:
    base: CartesianPoint
    principal: np.ndarray
    residual: float
    kappa: float
    self_adjoint_residual: float
    normal: np.ndarray
    frame: np.ndarray


def shape_operator(spec: HypersurfaceSpec, pt: CartesianPoint, metric: MetricField | None = None,
                   christoffel: np.ndarray | None = None) -> ShapeReport:
    """L(X) = -nabla_X N in a g-orthonormal tangent frame.

    The derivative of the normal field is assembled in closed form from the
    Hessian of F and the Christoffel symbols; the operator matrix is not
    symmetrised before the self-adjointness residual is taken.
    """
    metric = GrushinG(spec.params) if metric is None else metric
    z, dF, ddF, g, ginv, G, nG = _normal_data(spec, pt, metric)
    Gam = christoffel_closed(metric, pt) if christoffel is None else christoffel
    n = z.size
    # d_i g_ab = Gamma_{a,ib} + Gamma_{b,ia}
    low = np.einsum("am,mib->iab", g, Gam)
    dg = low + low.transpose(0, 2, 1)
    dginv = -np.einsum("ka,iab,bl->ikl", ginv, dg, ginv)
    dG = np.einsum("ikl,l->ik", dginv, dF) + ddF @ ginv       # dG[i, k] = d_i G^k
    dnG = (ddF @ G + dG @ dF) / (2 * nG)                      # d_i |G|
    sgn = spec.orientation
    N = sgn * G / nG
    dN = sgn * (dG / nG - np.outer(dnG, G) / nG ** 2)         # dN[i, k]
    T = tangent_frame(g, N)
    cov = dN + np.einsum("kij,j->ik", Gam, N)                 # (nabla_{e_i} N)^k
    LT = -T @ cov                                             # rows: L(T_a)
    Lmat = LT @ g @ T.T                                       # g(L T_a, T_b)
    sa = float(np.max(np.abs(Lmat - Lmat.T), initial=0.0))
    lam = np.linalg.eigvalsh(0.5 * (Lmat + Lmat.T)) if Lmat.size else np.zeros(0)
    rep = ShapeReport(pt, lam, 0.0, float(np.mean(lam)) if lam.size else 0.0, sa, N, T)
    rep.residual = umbilicity_residual(rep)
    return rep


def umbilicity_residual(report: ShapeReport, floor: float = UMBILIC_FLOOR) -> float:
    """Spread of the principal values over max(max |lambda|, floor)."""
    lam = np.asarray(report.principal)
    if lam.size <= 1:
        return 0.0
    return float((lam.max() - lam.min()) / max(np.max(np.abs(lam)), floor))


def project_to_surface(spec: HypersurfaceSpec, z, iters: int = 20) -> np.ndarray:
    """Newton steps along the Euclidean gradient until F(z) = 0."""
    z = np.asarray(z, dtype=float).copy()
    for _ in range(iters):
        f, dF, _ = spec.derivatives(z)
        if abs(f) < 1e-15 * max(1.0, np.linalg.norm(dF)):
            break
        z = z - f * dF / (dF @ dF)
    return z


def kappa_at(spec, z, metric=None) -> float:
    return shape_operator(spec, CartesianPoint.from_coords(z, spec.params.p), metric).kappa


def codazzi_terms(spec: HypersurfaceSpec, pt: CartesianPoint, U, V, Z, step: float = 1e-4):
    """(lhs, rhs) of g(V, Z) U(kappa) - g(U, Z) V(kappa) = R(N, Z, U, V) in metric g."""
    prm = spec.params
    metric = GrushinG(prm)
    U, V, Z = (np.asarray(w.components if isinstance(w, TangentVector) else w, dtype=float) for w in (U, V, Z))
    z = pt.coords
    g = metric.at(z)

    def dk(W):
        kp = kappa_at(spec, project_to_surface(spec, z + step * W))
        km = kappa_at(spec, project_to_surface(spec, z - step * W))
        return (kp - km) / (2 * step)

    N = unit_normal(spec, pt, metric).components
    lhs = (V @ g @ Z) * dk(U) - (U @ g @ Z) * dk(V)
    rhs = float(np.einsum("abcd,a,b,c,d->", riemann_tensor_closed(prm, pt), N, Z, U, V))
    return float(lhs), rhs


def codazzi_residual(spec: HypersurfaceSpec, pt: CartesianPoint, U, V, Z, step: float = 1e-4) -> float:
    lhs, rhs = codazzi_terms(spec, pt, U, V, Z, step)
    return abs(lhs - rhs)


def codazzi_witness(spec: HypersurfaceSpec, pt: CartesianPoint):
    """Tangent triple (U, V, Z) built from the normal with |R(N, Z, U, V)| as large as the cone witness.

    Returns (value, U, V, Z) with vectors in Cartesian components; value is 0
    when the normal lies in the cone.
    """
    prm = spec.params
    N = unit_normal(spec, pt)
    cyl = to_cylindrical(pt, prm)
    Nc = chart_pushforward(N, "cylindrical", prm)
    c = frame_components(prm, Nc)
    mask = np.zeros(prm.n, dtype=bool)
    mask[1 + prm.q:] = True
    from .conformal import _grushin_frame_data
    cart, _, _ = _grushin_frame_data(prm, cyl)
    if min(np.linalg.norm(c[mask]), np.linalg.norm(c[~mask])) <= 1e-12 * np.linalg.norm(c):
        return 0.0, None, None, None
    Uf, Vf, Zf = step1_witness(c, mask)
    # R(X, U', V', Z') = R(N, Z, U, V) with Z = U', U = V', V = Z'
    Zc, Uc, Vc = (w @ cart for w in (Uf, Vf, Zf))
    val = float(np.einsum("abcd,a,b,c,d->", riemann_tensor_closed(prm, pt), N.components, Zc, Uc, Vc))
    return abs(val), Uc, Vc, Zc


def cone_obstruction(params: GrushinParams, pt, N: TangentVector, tol: float = 1e-8) -> bool:
    """True when no umbilical hypersurface can have normal N at pt."""
    if params.n < 4:
        raise DimensionTooSmall("cones are defined for n >= 4")
    if params.p == 2:
        return False
    if N.chart == "cartesian":
        N = chart_pushforward(N, "cylindrical", params)
    member, _ = cone_membership(params, N.base, N, mode="closed_form", tol=tol)
    return not member


# ---------------------------------------------------------------------------
# family fitting
# ---------------------------------------------------------------------------

@dataclass
class FamilyFit:
    family: object
    residual: float
    residuals: dict


def _fit_b(X, Y, params):
    _, _, vt = np.linalg.svd(X, full_matrices=False)
    a = vt[-1]
    return B(a), float(np.max(np.abs(X @ a)))


def _fit_a2(X, Y, params):
    mu = Y.mean(0)
    if Y.shape[1] == 1:
        a = np.ones(1)
    else:
        _, _, vt = np.linalg.svd(Y - mu, full_matrices=False)
        a = vt[-1]
    c = float(mu @ a)
    return A2(a, c), float(np.max(np.abs(Y @ a - c)))


def _fit_a1(X, Y, params):
    a1 = params.alpha + 1
    r2 = np.linalg.norm(X, axis=1) ** (2 * a1)
    D = np.column_stack([2 * Y, np.ones(len(Y))])
    coef, *_ = np.linalg.lstsq(D, r2 + np.sum(Y * Y, 1), rcond=None)
    b, k = coef[:-1], coef[-1]
    c2 = k + b @ b
    if not c2 > 0:
        return None, np.inf
    c = float(np.sqrt(c2))
    rho = np.sqrt(r2 + np.sum((Y - b) ** 2, 1))
    return A1(b, c), float(np.max(np.abs(rho - c)))


def family_classifier(spec: HypersurfaceSpec | None, samples: Sequence[CartesianPoint], params: GrushinParams | None = None,
                      umbilic_tol: float = 1e-6, accept: float = 1e-4, tie: float = 1e-9) -> FamilyFit:
    """Fit B, A2 and A1 to on-surface samples and keep the best.

    When ``spec`` is given every sample must pass the umbilicity check first.
    Families whose residual is below ``tie`` are considered equally good and
    the one with fewer parameters wins.
    """
    params = spec.params if spec is not None else params
    if spec is not None:
        for pt in samples:
            res = shape_operator(spec, pt).residual
            if res > umbilic_tol:
                raise PreconditionViolation(f"sample is not umbilic (residual {res:.3g})")
    Z = np.array([pt.coords for pt in samples])
    X, Y = Z[:, :params.p], Z[:, params.p:]
    fits = {}
    for name, fn in (("B", _fit_b), ("A2", _fit_a2), ("A1", _fit_a1)):
        fam, res = fn(X, Y, params)
        if fam is not None:
            fits[name] = (fam, res)
    resid = {k: v[1] for k, v in fits.items()}
    tied = [k for k in ("B", "A2", "A1") if k in fits and fits[k][1] <= tie]
    best = tied[0] if tied else min(resid, key=resid.get)
    if resid[best] > accept:
        raise ClassificationFailed(f"umbilic samples fit no family (best {best}: {resid[best]:.3g})")
    return FamilyFit(fits[best][0], resid[best], resid)
