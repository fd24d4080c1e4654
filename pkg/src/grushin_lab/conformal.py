"""Elementary conformal maps, Cauchy-Riemann checks, Weyl cones and classification fitting."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import orthogonal_procrustes

from . import _fd
from .chart import (
    CartesianPoint,
    CylindricalPoint,
    GrushinParams,
    TangentVector,
    chart_pushforward,
    check_m0,
    grushin_frame,
    homogeneous_norm,
    sphere_basis,
    to_cartesian,
    to_cylindrical,
)
from .errors import (
    DimensionTooSmall,
    DomainViolation,
    FitFailed,
    InvalidInput,
    NonpositiveFactor,
)
from .metric import (
    GenericWarped,
    GrushinG,
    GrushinHat,
    MetricField,
    christoffel_closed,
    gradient_and_hessian,
    ricci_tensor_closed,
    weyl_tensor_closed,
    warped_riemann_tensor,
)
from .tensors import orthonormal_frame, to_frame, weyl_tensor


# ---------------------------------------------------------------------------
# elementary maps
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Isometry:
    """(x, y) -> (A x, B y + b) with A in O(p), B in O(q)."""
    A: np.ndarray
    B: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        for name in ("A", "B"):
            m = np.atleast_2d(np.asarray(getattr(self, name), dtype=float))
            if np.max(np.abs(m.T @ m - np.eye(m.shape[0]))) > 1e-12:
                raise InvalidInput(f"{name} is not orthogonal")
            object.__setattr__(self, name, m)
        object.__setattr__(self, "b", np.atleast_1d(np.asarray(self.b, dtype=float)))

    def apply(self, x, y, params):
        return self.A @ x, self.B @ y + self.b

    def jacobian(self, x, y, params):
        p, q = x.size, y.size
        J = np.zeros((p + q, p + q))
        J[:p, :p] = self.A
        J[p:, p:] = self.B
        return J

    def factor(self, x, y, params, metric="g"):
        return 1.0


@dataclass(frozen=True)
class Dilation:
    """delta_t(x, y) = (t x, t^(a+1) y)."""
    t: float

    def __post_init__(self):
        if not self.t > 0:
            raise InvalidInput("dilation parameter must be positive")

    def apply(self, x, y, params):
        return self.t * x, self.t ** (params.alpha + 1) * y

    def jacobian(self, x, y, params):
        p, q = x.size, y.size
        return np.diag(np.concatenate([np.full(p, self.t), np.full(q, self.t ** (params.alpha + 1))]))

    def factor(self, x, y, params, metric="g"):
        return self.t ** -(params.alpha + 1) if metric == "g" else 1.0 / self.t


@dataclass(frozen=True)
class Inversion:
    """z -> delta_{|z|^-2} z, the reflection in the unit homogeneous sphere."""

    def _check(self, x, y):
        if not (np.any(x) or np.any(y)):
            raise DomainViolation("the inversion is undefined at the origin")

    def apply(self, x, y, params):
        self._check(x, y)
        a1 = params.alpha + 1
        S = np.linalg.norm(x) ** (2 * a1) + y @ y
        return x * S ** (-1 / a1), y / S

    def jacobian(self, x, y, params):
        self._check(x, y)
        a, a1 = params.alpha, params.alpha + 1
        p, q = x.size, y.size
        xn = np.linalg.norm(x)
        S = xn ** (2 * a1) + y @ y
        dS_x = 2 * a1 * xn ** (2 * a) * x if xn > 0 else np.zeros(p)
        dS_y = 2 * y
        beta = 1 / a1
        J = np.zeros((p + q, p + q))
        J[:p, :p] = S ** -beta * np.eye(p) - beta * S ** (-beta - 1) * np.outer(x, dS_x)
        J[:p, p:] = -beta * S ** (-beta - 1) * np.outer(x, dS_y)
        J[p:, :p] = -np.outer(y, dS_x) / S ** 2
        J[p:, p:] = np.eye(q) / S - np.outer(y, dS_y) / S ** 2
        return J

    def factor(self, x, y, params, metric="g"):
        nz = homogeneous_norm(CartesianPoint(x, y), params)
        return nz ** (2 * (params.alpha + 1)) if metric == "g" else nz ** 2


@dataclass(frozen=True)
class YTranslation:
    """(x, y) -> (x, y + b)."""
    b: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "b", np.atleast_1d(np.asarray(self.b, dtype=float)))

    def apply(self, x, y, params):
        return x, y + self.b

    def jacobian(self, x, y, params):
        return np.eye(x.size + y.size)

    def factor(self, x, y, params, metric="g"):
        return 1.0


@dataclass(frozen=True)
class CustomMap:
    """Arbitrary map on Cartesian coordinates, used for fault injection.

    Its Jacobian is taken by finite differences and it has no closed-form factor.
    """
    func: Callable[[np.ndarray], np.ndarray]
    label: str = "custom"

    def apply(self, x, y, params):
        z = self.func(np.concatenate([x, y]))
        return z[:x.size], z[x.size:]

    def jacobian(self, x, y, params):
        z = np.concatenate([x, y])
        F = lambda Z: np.array([self.func(row) for row in Z])
        _, J, _ = _fd.derivatives(F, z, 1e-4 * (1 + np.linalg.norm(z)), order=4, second=False)
        return J.T

    def factor(self, x, y, params, metric="g"):
        raise InvalidInput(f"{self.label} has no closed-form conformal factor")


ElementaryMap = Isometry | Dilation | Inversion | YTranslation | CustomMap


@dataclass
class MapChain:
    """Composition of elementary maps; ``maps[0]`` is applied first."""
    maps: Sequence
    params: GrushinParams

    def _trace(self, pt: CartesianPoint):
        x, y = pt.x, pt.y
        for m in self.maps:
            yield m, x, y
            x, y = m.apply(x, y, self.params)
        yield None, x, y

    def apply(self, pt: CartesianPoint) -> CartesianPoint:
        *_, (_, x, y) = self._trace(pt)
        return CartesianPoint(x, y)

    def jacobian(self, pt: CartesianPoint) -> np.ndarray:
        J = np.eye(self.params.n)
        for m, x, y in self._trace(pt):
            if m is not None:
                J = m.jacobian(x, y, self.params) @ J
        return J

    def factor(self, pt: CartesianPoint, metric: str = "g") -> float:
        """Closed-form conformal factor via the cocycle u_{F o G}(z) = u_F(G z) u_G(z)."""
        u = 1.0
        for m, x, y in self._trace(pt):
            if m is not None:
                u *= m.factor(x, y, self.params, metric)
        return u

    def then(self, other: "MapChain") -> "MapChain":
        """The composition other o self."""
        return MapChain(list(self.maps) + list(other.maps), self.params)


def apply(chain: MapChain, pt: CartesianPoint) -> CartesianPoint:
    return chain.apply(pt)


def jacobian(chain: MapChain, pt: CartesianPoint) -> np.ndarray:
    return chain.jacobian(pt)


def jacobian_fd(chain: MapChain, pt: CartesianPoint, step: float = 1e-5) -> np.ndarray:
    p = chain.params.p
    F = lambda Z: np.array([chain.apply(CartesianPoint.from_coords(z, p)).coords for z in Z])
    z = pt.coords
    _, J, _ = _fd.derivatives(F, z, step * (1 + np.linalg.norm(z)), order=4, second=False)
    return J.T


def classification_chain(params: GrushinParams, A=None, B=None, c=None, t: float = 1.0,
                         b=None, s: int = 0) -> MapChain:
    """Gamma(delta_{t |(x, y-b)|^s}(x, y - b)) as a chain of elementary maps."""
    p, q = params.p, params.q
    A = np.eye(p) if A is None else A
    B = np.eye(q) if B is None else B
    c = np.zeros(q) if c is None else c
    b = np.zeros(q) if b is None else np.atleast_1d(b)
    maps = [YTranslation(-b)]
    if s == -2:
        maps.append(Inversion())
    elif s != 0:
        raise InvalidInput("s must be 0 or -2")
    maps += [Dilation(t), Isometry(A, B, c)]
    return MapChain(maps, params)


def random_orthogonal(k: int, rng: np.random.Generator) -> np.ndarray:
    Qm, R = np.linalg.qr(rng.standard_normal((k, k)))
    return Qm * np.sign(np.diag(R))


def random_classification_chain(params: GrushinParams, rng: np.random.Generator, s: int | None = None):
    """Seeded random chain of the classified form; returns (chain, truth dict)."""
    s = int(rng.choice([0, -2])) if s is None else s
    truth = dict(A=random_orthogonal(params.p, rng), B=random_orthogonal(params.q, rng),
                 c=rng.uniform(-1, 1, params.q), t=float(rng.uniform(0.5, 2.0)),
                 b=rng.uniform(-1, 1, params.q) if s == -2 else np.zeros(params.q), s=s)
    return classification_chain(params, **truth), truth


# ---------------------------------------------------------------------------
# Cauchy-Riemann residuals
# ---------------------------------------------------------------------------

def _isotropy(Mx: np.ndarray) -> tuple[float, float]:
    """u_hat from the geometric mean of frame-norm ratios; relative isotropy residual."""
    d = np.diag(Mx)
    if np.any(d <= 0):
        return np.nan, np.inf
    inv_u2 = float(np.exp(np.mean(np.log(d))))
    resid = float(np.max(np.abs(Mx / inv_u2 - np.eye(Mx.shape[0]))))
    return inv_u2 ** -0.5, resid


def cr_residual(chain: MapChain, pt: CartesianPoint, metric: MetricField | None = None):
    """(u_hat, residual) of g(f_* e_i, f_* e_j) = u^-2 delta_ij over a g-orthonormal frame."""
    metric = GrushinG(chain.params) if metric is None else metric
    check_m0(pt)
    img = chain.apply(pt)
    check_m0(img)
    F = orthonormal_frame(metric.at(pt.coords))
    JF = F @ chain.jacobian(pt).T
    return _isotropy(JF @ metric.at(img.coords) @ JF.T)


def _hat_gram(vecs: np.ndarray, pt: CartesianPoint, params: GrushinParams) -> np.ndarray:
    """g-hat Gram matrix of Cartesian vectors; on x = 0 vectors must have no y part."""
    p = params.p
    vx, vy = vecs[:, :p], vecs[:, p:]
    if pt.xnorm > 0:
        c = 1.0 / ((params.alpha + 1) ** 2 * pt.xnorm ** (2 * params.alpha))
        return vx @ vx.T + c * vy @ vy.T
    if np.max(np.abs(vy), initial=0.0) > 1e-12 * max(1.0, np.max(np.abs(vx))):
        raise DomainViolation("vector with a y-component has infinite g-hat length on x = 0")
    return vx @ vx.T


def cr_residual_hat(chain: MapChain, pt: CartesianPoint):
    """(u_hat, residual) for the control metric g-hat over the frame X_j, Y_l.

    On x = 0 the Y fields vanish and only X_1..X_p are used.
    """
    prm = chain.params
    if not (np.any(pt.x) or np.any(pt.y)):
        raise DomainViolation("the origin is excluded")
    frame = grushin_frame(pt, prm)
    if pt.xnorm == 0:
        frame = frame[:prm.p]
    img = chain.apply(pt)
    JF = frame @ chain.jacobian(pt).T
    return _isotropy(_hat_gram(JF, img, prm))


# ---------------------------------------------------------------------------
# cones U_P
# ---------------------------------------------------------------------------

@dataclass
class ConeWitness:
    value: float                 # |W(X, Y, U, V)| relative to the Frobenius norm of W
    vectors: np.ndarray          # rows Y, U, V in frame components
    source: str


def _perp_unit(v: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Deterministic unit vector supported on ``mask`` and orthogonal to v."""
    idx = np.flatnonzero(mask)
    best, best_norm = None, -1.0
    for i in idx:
        e = np.zeros_like(v)
        e[i] = 1.0
        vv = v @ v
        w = e - (v @ e) / vv * v if vv > 0 else e
        nw = np.linalg.norm(w)
        if nw > best_norm:
            best, best_norm = w, nw
    return best / best_norm


def step1_witness(X: np.ndarray, sphere_mask: np.ndarray) -> np.ndarray:
    """Orthonormal (U, V, Z), all orthogonal to X, with R(X, U, V, Z) != 0 for mixed X.

    Frame components with identity metric.  Needs at least two sphere and two
    horizontal directions.
    """
    XS = np.where(sphere_mask, X, 0.0)
    XH = X - XS
    if sphere_mask.sum() < 2 or (~sphere_mask).sum() < 2:
        raise DimensionTooSmall("the witness needs two sphere and two horizontal directions")
    if np.linalg.norm(XS) == 0 or np.linalg.norm(XH) == 0:
        raise InvalidInput("the witness is only defined for mixed vectors")
    XSp = _perp_unit(XS, sphere_mask)
    XHp = _perp_unit(XH, ~sphere_mask)
    c1 = (XS @ XS) / (XH @ XH)
    V = XS - c1 * XH
    U = XSp + XHp
    Z = XSp - XHp
    return np.array([U / np.linalg.norm(U), V / np.linalg.norm(V), Z / np.linalg.norm(Z)])


def _random_completions(X: np.ndarray, rng: np.random.Generator, trials: int) -> np.ndarray:
    n = X.size
    Qm, _ = np.linalg.qr(np.column_stack([X, np.eye(n)]))
    perp = Qm[:, 1:n]
    G = rng.standard_normal((trials, n - 1, 3))
    Qs, _ = np.linalg.qr(G)
    return np.einsum("ik,tkj->tji", perp, Qs)     # (trials, 3, n)


def weyl_search(Wf: np.ndarray, X: np.ndarray, sphere_mask: np.ndarray, rng: np.random.Generator,
                trials: int = 500) -> ConeWitness:
    """Largest |W(X, Y, U, V)| over orthonormal completions of X (frame components)."""
    X = X / np.linalg.norm(X)
    scale = float(np.linalg.norm(Wf))
    if scale == 0:
        return ConeWitness(0.0, np.zeros((3, X.size)), "flat")
    triples = _random_completions(X, rng, trials)
    vals = np.abs(np.einsum("abcd,a,tb,tc,td->t", Wf, X, triples[:, 0], triples[:, 1],
                            triples[:, 2], optimize=True))
    k = int(np.argmax(vals))
    best = ConeWitness(float(vals[k]) / scale, triples[k], "random")
    XS = np.where(sphere_mask, X, 0.0)
    XH = X - XS
    if np.linalg.norm(XS) > 0 and np.linalg.norm(XH) > 0 and sphere_mask.sum() >= 2 and (~sphere_mask).sum() >= 2:
        U, V, Z = step1_witness(X, sphere_mask)
        v = abs(float(np.einsum("abcd,a,b,c,d->", Wf, X, U, V, Z))) / scale
        if v >= best.value:
            best = ConeWitness(v, np.array([U, V, Z]), "step1")
    return best


def _grushin_frame_data(params: GrushinParams, pt: CylindricalPoint):
    """Cartesian components of the g-orthonormal frame (e_r, e_y, sphere) and the sphere mask."""
    n, q = params.n, params.q
    a1 = params.alpha + 1
    E = sphere_basis(pt.theta)
    ambient = np.zeros((n, 1 + q + params.p))
    ambient[0, 0] = 1.0
    ambient[1:1 + q, 1:1 + q] = np.eye(q)
    ambient[1 + q:, 1 + q:] = E.T / (a1 * pt.r)
    cart = np.array([chart_pushforward(TangentVector(pt, v), "cartesian", params).components
                     for v in ambient])
    mask = np.zeros(n, dtype=bool)
    mask[1 + q:] = True
    return cart, mask, E


def frame_components(params: GrushinParams, X: TangentVector) -> np.ndarray:
    """Coefficients of a cylindrical tangent vector in the g-orthonormal frame."""
    E = sphere_basis(X.base.theta)
    return np.concatenate([[X.dr], X.dy, (params.alpha + 1) * X.base.r * (E.T @ X.dtheta)])


def weyl_in_frame(params: GrushinParams, pt: CylindricalPoint, source: str = "closed"):
    cart, mask, _ = _grushin_frame_data(params, pt)
    cpt = to_cartesian(pt, params)
    if source == "closed":
        W = weyl_tensor_closed(params, cpt)
    else:
        from .metric import riemann_fd
        M = GrushinG(params)
        W = weyl_tensor(riemann_fd(M, cpt.coords), M.at(cpt.coords))
    return to_frame(W, cart), mask


def cone_membership(params: GrushinParams, pt: CylindricalPoint, X: TangentVector,
                    mode: str = "closed_form", tol: float = 1e-9, trials: int = 500,
                    rng: np.random.Generator | None = None, source: str = "closed"):
    """Is X in the cone U_P?  Returns (member, witness).

    ``closed_form``: member iff min(|X_H|, |X_S|) <= tol |X| (p >= 3; for p = 2
    the metric is flat and every vector is a member).
    ``weyl_search``: member iff no orthonormal completion (Y, U, V) with
    |W(X, Y, U, V)| > tol ||W|| is found.
    """
    if params.n < 4:
        raise DimensionTooSmall("cones are defined for n >= 4")
    c = frame_components(params, X)
    if mode == "closed_form":
        if params.p == 2:
            return True, None
        q = params.q
        nh, ns = np.linalg.norm(c[:1 + q]), np.linalg.norm(c[1 + q:])
        return bool(min(nh, ns) <= tol * np.linalg.norm(c)), None
    if mode != "weyl_search":
        raise InvalidInput(f"unknown mode {mode!r}")
    rng = np.random.default_rng(0) if rng is None else rng
    Wf, mask = weyl_in_frame(params, pt, source)
    wit = weyl_search(Wf, c, mask, rng, trials)
    return bool(wit.value <= tol), wit


def warped_frame_weyl(W: GenericWarped, z, source: str = "closed"):
    """Weyl tensor of a warped product in its orthonormal coordinate frame, plus the sphere mask."""
    from .metric import riemann_fd
    z = np.asarray(z, dtype=float)
    g = W.at(z)
    R = warped_riemann_tensor(W, z) if source == "closed" else riemann_fd(W, z)
    F = np.diag(1 / np.sqrt(np.diag(g)))
    mask = np.zeros(W.dim, dtype=bool)
    mask[W.base_dim:] = True
    return to_frame(weyl_tensor(R, g), F), mask, F


def cone_membership_warped(W: GenericWarped, z, X: np.ndarray, mode: str = "closed_form",
                           tol: float = 1e-9, trials: int = 500, rng=None, source: str = "closed"):
    """Cone membership on a warped product; X is given in orthonormal-frame components."""
    if W.dim < 4:
        raise DimensionTooSmall("cones are defined for n >= 4")
    X = np.asarray(X, dtype=float)
    m = W.base_dim
    if mode == "closed_form":
        return bool(min(np.linalg.norm(X[:m]), np.linalg.norm(X[m:])) <= tol * np.linalg.norm(X)), None
    rng = np.random.default_rng(0) if rng is None else rng
    Wf, mask, _ = warped_frame_weyl(W, z, source)
    wit = weyl_search(Wf, X, mask, rng, trials)
    return bool(wit.value <= tol), wit


def _hs_norms(params: GrushinParams, pt: CartesianPoint, v: np.ndarray) -> tuple[float, float]:
    p, a = params.p, params.alpha
    th = pt.x / pt.xnorm
    w2 = (a + 1) ** 2 * pt.xnorm ** (2 * a)
    vx, vy = v[:p], v[p:]
    rad = th @ vx
    tang = vx - rad * th
    return float(np.sqrt(w2 * rad ** 2 + vy @ vy)), float(np.sqrt(w2 * tang @ tang))


def classify_pushforward(params: GrushinParams, pt: CartesianPoint, img: CartesianPoint,
                         J: np.ndarray, tol: float = 1e-8):
    """Product-pattern of a linear map T_P -> T_f(P) with respect to (T S, T H).

    Returns ``(pattern, residual, admissible)`` with pattern "SS-HH" (sphere to
    sphere, horizontal to horizontal), "SH-HS" (swap) or "none".
    """
    p, q = params.p, params.q
    th = pt.x / pt.xnorm
    E = sphere_basis(th)
    gens_s = [np.concatenate([E[:, k], np.zeros(q)]) for k in range(p - 1)]
    gens_h = [np.concatenate([th, np.zeros(q)])] + [np.concatenate([np.zeros(p), e]) for e in np.eye(q)]
    keep, swap = 0.0, 0.0
    for v in gens_s:
        h, s = _hs_norms(params, img, J @ v)
        nv = np.hypot(h, s)
        keep, swap = max(keep, h / nv), max(swap, s / nv)
    for v in gens_h:
        h, s = _hs_norms(params, img, J @ v)
        nv = np.hypot(h, s)
        keep, swap = max(keep, s / nv), max(swap, h / nv)
    if keep <= swap:
        pattern, resid = "SS-HH", keep
    else:
        pattern, resid = "SH-HS", swap
    if resid > tol:
        pattern = "none"
    admissible = pattern == "SS-HH" or (pattern == "SH-HS" and p - 1 == q + 1)
    return pattern, float(resid), admissible


def cone_invariance_check(chain: MapChain, pt: CartesianPoint, tol: float = 1e-8):
    check_m0(pt)
    img = chain.apply(pt)
    check_m0(img)
    return classify_pushforward(chain.params, pt, img, chain.jacobian(pt), tol)


def ricci_preservation_check(chain: MapChain, pt: CartesianPoint, U, V) -> float:
    """|Ric(f_* U, f_* V) - Ric(U, V)| / (1 + |Ric(U, V)|) with the closed-form Ricci of g."""
    prm = chain.params
    U = U.components if isinstance(U, TangentVector) else np.asarray(U, dtype=float)
    V = V.components if isinstance(V, TangentVector) else np.asarray(V, dtype=float)
    check_m0(pt)
    img = chain.apply(pt)
    check_m0(img)
    J = chain.jacobian(pt)
    before = float(U @ ricci_tensor_closed(prm, pt) @ V)
    after = float((J @ U) @ ricci_tensor_closed(prm, img) @ (J @ V))
    return abs(after - before) / (1 + abs(before))


# ---------------------------------------------------------------------------
# conformal factors
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ConformalFactorModel:
    """u = H/2 (r^2 + |y|^2) + L r + <M, y> + N with r = |x|^(a+1).

    Admissible factors are the constants (H = L = M = 0) and the homogeneous
    spheres a (r^2 + |y - b|^2), i.e. H = 2a, L = 0, M = -2ab, N = a|b|^2.
    """
    params: GrushinParams
    H: float = 0.0
    L: float = 0.0
    M: np.ndarray = field(default=None)
    N: float = 1.0

    def __post_init__(self):
        M = np.zeros(self.params.q) if self.M is None else np.atleast_1d(np.asarray(self.M, dtype=float))
        object.__setattr__(self, "M", M)

    @classmethod
    def constant(cls, params, c: float):
        if not c > 0:
            raise NonpositiveFactor("constant factor must be positive")
        return cls(params, N=float(c))

    @classmethod
    def sphere(cls, params, a: float, b):
        if not a > 0:
            raise NonpositiveFactor("sphere factor needs a > 0")
        b = np.atleast_1d(np.asarray(b, dtype=float))
        return cls(params, H=2 * a, M=-2 * a * b, N=a * float(b @ b))

    @property
    def kind(self) -> str:
        if self.H == 0 and self.L == 0 and not np.any(self.M):
            return "constant"
        if self.L == 0 and self.H > 0 and np.isclose(self.M @ self.M, 2 * self.N * self.H, rtol=1e-12, atol=1e-300):
            return "sphere"
        return "quadratic"

    @property
    def a(self) -> float:
        return self.H / 2

    @property
    def b(self) -> np.ndarray:
        return -self.M / self.H if self.H else np.zeros_like(self.M)

    def trace_identity(self) -> float:
        """n (2NH - |M|^2): the value of 2u Delta u - n |grad u|^2 when L = 0."""
        return self.params.n * (2 * self.N * self.H - self.M @ self.M)

    def __call__(self, Z):
        Z = np.atleast_2d(Z)
        p, a1 = self.params.p, self.params.alpha + 1
        r = np.linalg.norm(Z[:, :p], axis=1) ** a1
        y = Z[:, p:]
        return 0.5 * self.H * (r ** 2 + np.sum(y * y, 1)) + self.L * r + y @ self.M + self.N

    def derivatives(self, z):
        """(u, grad, hess) in Cartesian coordinates, in closed form."""
        p, n, a = self.params.p, self.params.n, self.params.alpha
        a1 = a + 1
        z = np.asarray(z, dtype=float)
        x, y = z[:p], z[p:]
        xn = np.linalg.norm(x)
        u = float(self(z[None, :])[0])
        grad = np.zeros(n)
        hess = np.zeros((n, n))
        xx = np.outer(x, x)
        I = np.eye(p)
        grad[:p] = self.H * a1 * xn ** (2 * a) * x
        hess[:p, :p] = self.H * a1 * (xn ** (2 * a) * I + 2 * a * xn ** (2 * a - 2) * xx)
        if self.L:
            grad[:p] += self.L * a1 * xn ** (a - 1) * x
            hess[:p, :p] += self.L * a1 * (xn ** (a - 1) * I + (a - 1) * xn ** (a - 3) * xx)
        grad[p:] = self.H * y + self.M
        hess[p:, p:] = self.H * np.eye(n - p)
        return u, grad, hess


def factor_pde_residual(u, pt: CartesianPoint, params: GrushinParams | None = None,
                        chain: MapChain | None = None):
    """Residuals of the reduced conformal-factor system and of its trace.

    full:  max over a g-orthonormal frame of
           |(n-2) u^-1 Hess u(e_i, e_j) - delta_ij u^-2 {(n-1)|grad u|^2 - u Lap u}|
    trace: |2 u Lap u - n |grad u|^2|
    """
    if chain is not None:
        params = chain.params
        u = lambda Z: np.array([chain.factor(CartesianPoint.from_coords(z, chain.params.p)) for z in np.atleast_2d(Z)])
    if params is None:
        params = u.params
    n = params.n
    check_m0(pt)
    z = pt.coords
    if isinstance(u, ConformalFactorModel):
        uval, du, ddu = u.derivatives(z)
    else:
        uval, du, ddu = gradient_and_hessian(u, z)
    if uval <= 0:
        raise NonpositiveFactor(f"u = {uval:.3g} is not positive")
    M = GrushinG(params)
    g = M.at(z)
    ginv = np.linalg.inv(g)
    hess = ddu - np.einsum("kij,k->ij", christoffel_closed(M, pt), du)
    grad2 = float(du @ ginv @ du)
    lap = float(np.einsum("ij,ij->", ginv, hess))
    E = (n - 2) / uval * hess - ((n - 1) * grad2 - uval * lap) / uval ** 2 * g
    F = orthonormal_frame(g)
    full = float(np.max(np.abs(F @ E @ F.T)))
    trace = abs(2 * uval * lap - n * grad2)
    return full, trace


@dataclass
class FactorFit:
    model: ConformalFactorModel
    rel_error: float
    bic: dict


def fit_factor_model(points: Sequence[CartesianPoint], factors, params: GrushinParams) -> FactorFit:
    """Fit constant and sphere factors by least squares; choose by a BIC comparison."""
    u = np.asarray(factors, dtype=float)
    m = u.size
    Z = np.array([pt.coords for pt in points])
    p, a1 = params.p, params.alpha + 1
    r2 = np.linalg.norm(Z[:, :p], axis=1) ** (2 * a1)
    y = Z[:, p:]
    # relative residuals throughout: the factor spans orders of magnitude
    wts = 1 / u
    c = float(np.sum(u * wts ** 2) / np.sum(wts ** 2))
    const = ConformalFactorModel.constant(params, c)
    D = np.column_stack([0.5 * (r2 + np.sum(y * y, 1)), y, np.ones(m)]) * wts[:, None]
    coef, *_ = np.linalg.lstsq(D, np.ones(m), rcond=None)
    Hc = coef[0]
    fits = {"constant": const}
    if Hc > 0:
        bb = -coef[1:1 + params.q] / Hc
        fits["sphere"] = ConformalFactorModel.sphere(params, Hc / 2, bb)
    k = {"constant": 1, "sphere": params.q + 2}
    bic, err = {}, {}
    for name, mod in fits.items():
        rel = mod(Z) / u - 1
        rss = max(float(rel @ rel), 1e-28 * m)
        bic[name] = m * np.log(rss / m) + k[name] * np.log(m)
        err[name] = float(np.max(np.abs(rel)))
    best = min(bic, key=bic.get)
    return FactorFit(fits[best], err[best], bic)


@dataclass
class ClassificationFit:
    A: np.ndarray
    B: np.ndarray
    c: np.ndarray        # translation of the outer isometry
    t: float
    b: np.ndarray
    s: int
    residual: float
    params: GrushinParams

    @property
    def chain(self) -> MapChain:
        return classification_chain(self.params, self.A, self.B, self.c, self.t, self.b, self.s)


def _predict_inner(params, Z, t, b, s):
    p, a1 = params.p, params.alpha + 1
    x, yb = Z[:, :p], Z[:, p:] - b
    if s == 0:
        lam = np.full(len(Z), t)
    else:
        nz = (np.linalg.norm(x, axis=1) ** (2 * a1) + np.sum(yb * yb, 1)) ** (1 / (2 * a1))
        lam = t * nz ** s
    return lam[:, None] * x, (lam ** a1)[:, None] * yb


def fit_classification(samples, params: GrushinParams, tol: float = 1e-6, fail_tol: float = 1e-4):
    """Recover (Gamma, t, b, s) with f(z) = Gamma(delta_{t |(x, y-b)|^s}(x, y - b)).

    The conformal factor is read off from |x| ratios, u = (|x| / |f(z)_x|)^(a+1),
    which holds for every Ricci-preserving conformal map of g.
    """
    p, q = params.p, params.q
    if len(samples) < p * p + q * q + q + 3:
        raise InvalidInput(f"need at least {p * p + q * q + q + 3} samples, got {len(samples)}")
    Z = np.array([s[0].coords for s in samples])
    FZ = np.array([s[1].coords for s in samples])
    xn, fxn = np.linalg.norm(Z[:, :p], axis=1), np.linalg.norm(FZ[:, :p], axis=1)
    if np.any(xn == 0) or np.any(fxn == 0):
        raise InvalidInput("samples must lie in M0")
    u = (xn / fxn) ** (params.alpha + 1)
    ff = fit_factor_model([s[0] for s in samples], u, params)
    if ff.model.kind == "constant":
        s, t, b = 0, ff.model.N ** (-1 / (params.alpha + 1)), np.zeros(q)
    else:
        s, t, b = -2, ff.model.a ** (-1 / (params.alpha + 1)), ff.model.b
    wx, wy = _predict_inner(params, Z, t, b, s)
    R, _ = orthogonal_procrustes(wx, FZ[:, :p])
    A = R.T
    my, mfy = wy.mean(0), FZ[:, p:].mean(0)
    Rb, _ = orthogonal_procrustes(wy - my, FZ[:, p:] - mfy)
    B = Rb.T
    c = mfy - B @ my
    pred = np.column_stack([wx @ A.T, wy @ B.T + c])
    resid = float(np.max(np.linalg.norm(pred - FZ, axis=1)))
    if resid > fail_tol:
        raise FitFailed(f"samples are not of the classified form (residual {resid:.3g})", resid)
    return ClassificationFit(A, B, c, float(t), b, s, resid, params)


def weyl_sectional_ratio(params: GrushinParams, pt: CylindricalPoint, X: TangentVector,
                         Y: TangentVector, tol: float = 1e-10) -> float:
    """W(X, Y, X, Y) / (g(X, X) g(Y, Y)) for g-orthogonal sphere vectors X, Y."""
    for v in (X, Y):
        if abs(v.dr) > tol or np.any(np.abs(v.dy) > tol):
            raise InvalidInput("X and Y must be tangent to the sphere factor")
    if abs(X.dtheta @ Y.dtheta) > tol * np.linalg.norm(X.dtheta) * np.linalg.norm(Y.dtheta):
        raise InvalidInput("X and Y must be orthogonal")
    cpt = to_cartesian(pt, params)
    Xc = chart_pushforward(X, "cartesian", params).components
    Yc = chart_pushforward(Y, "cartesian", params).components
    W = weyl_tensor_closed(params, cpt)
    g = GrushinG(params).at(cpt.coords)
    return float(np.einsum("abcd,a,b,c,d->", W, Xc, Yc, Xc, Yc) / ((Xc @ g @ Xc) * (Yc @ g @ Yc)))


def factor_product_residual(chain: MapChain, rys: Sequence, thetas: Sequence) -> float:
    """Rank-one defect sigma_2 / sigma_1 of the grid u(h_i, theta_j), h = (r, y)."""
    prm = chain.params
    grid = np.empty((len(rys), len(thetas)))
    for i, (r, y) in enumerate(rys):
        for j, th in enumerate(thetas):
            pt = to_cartesian(CylindricalPoint(r, y, th), prm)
            grid[i, j] = cr_residual(chain, pt)[0]
    sv = np.linalg.svd(grid, compute_uv=False)
    return float(sv[1] / sv[0]) if sv.size > 1 else 0.0
