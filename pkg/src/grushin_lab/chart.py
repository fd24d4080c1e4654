"""Charts, points and tangent bookkeeping on M = R^p x R^q and M0 = (R^p minus 0) x R^q.

Two charts are used throughout:

* Cartesian ``(x, y)`` with ``x`` in R^p and ``y`` in R^q.
* Cylindrical ``(r, y, theta)`` with ``r = |x|**(alpha + 1)`` and ``theta = x / |x|``.

Cylindrical tangent vectors are stored in the *ambient* representation: a
length ``1 + q + p`` array ``(dr, dy, dtheta)`` with ``dtheta`` orthogonal to
``theta``.  This avoids coordinate singularities on the sphere.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Union

import numpy as np

from .errors import InvalidInput, SingularChart

log = logging.getLogger(__name__)

SINGULAR_GUARD = 1e-9
THETA_TOL = 1e-12
ORTHO_TOL = 1e-10


@dataclass(frozen=True)
class GrushinParams:
    p: int
    q: int
    alpha: float

    def __post_init__(self):
        if int(self.p) != self.p or self.p < 1:
            raise InvalidInput(f"p must be an integer >= 1, got {self.p}")
        if int(self.q) != self.q or self.q < 1:
            raise InvalidInput(f"q must be an integer >= 1, got {self.q}")
        # alpha = 0 is admitted as the Euclidean limit used by several checks.
        if not np.isfinite(self.alpha) or self.alpha < 0:
            raise InvalidInput(f"alpha must be >= 0, got {self.alpha}")
        object.__setattr__(self, "p", int(self.p))
        object.__setattr__(self, "q", int(self.q))
        object.__setattr__(self, "alpha", float(self.alpha))

    @property
    def n(self) -> int:
        return self.p + self.q

    @property
    def Q(self) -> float:
        """Homogeneous dimension p + (alpha + 1) q."""
        return self.p + (self.alpha + 1.0) * self.q

    @property
    def supports_cones(self) -> bool:
        """Cone structure and isometry rigidity are only claimed for p >= 3."""
        return self.p >= 3


def _vec(a, name) -> np.ndarray:
    arr = np.atleast_1d(np.asarray(a, dtype=float))
    if arr.ndim != 1:
        raise InvalidInput(f"{name} must be one-dimensional")
    return arr


@dataclass(frozen=True)
class CartesianPoint:
    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "x", _vec(self.x, "x"))
        object.__setattr__(self, "y", _vec(self.y, "y"))

    @property
    def coords(self) -> np.ndarray:
        return np.concatenate([self.x, self.y])

    @classmethod
    def from_coords(cls, z, p: int) -> "CartesianPoint":
        z = np.asarray(z, dtype=float)
        return cls(z[:p], z[p:])

    @property
    def xnorm(self) -> float:
        return float(np.linalg.norm(self.x))

    def in_m0(self) -> bool:
        return self.xnorm >= SINGULAR_GUARD * (1.0 + np.linalg.norm(self.y))


@dataclass(frozen=True)
class CylindricalPoint:
    r: float
    y: np.ndarray
    theta: np.ndarray

    def __post_init__(self):
        r = float(self.r)
        if not r > 0:
            raise InvalidInput(f"r must be positive, got {r}")
        theta = _vec(self.theta, "theta")
        if abs(np.linalg.norm(theta) - 1.0) > THETA_TOL:
            raise InvalidInput("theta must be a unit vector")
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "y", _vec(self.y, "y"))
        object.__setattr__(self, "theta", theta)


Point = Union[CartesianPoint, CylindricalPoint]


def check_m0(pt: CartesianPoint) -> None:
    if not pt.in_m0():
        raise SingularChart(f"point with |x| = {pt.xnorm:.3g} is on the singular set x = 0")


def _check_dims(pt: Point, params: GrushinParams) -> None:
    p = pt.x.size if isinstance(pt, CartesianPoint) else pt.theta.size
    if p != params.p or pt.y.size != params.q:
        raise InvalidInput(f"point dimensions ({p}, {pt.y.size}) do not match (p, q) = ({params.p}, {params.q})")


def to_cylindrical(pt: CartesianPoint, params: GrushinParams) -> CylindricalPoint:
    _check_dims(pt, params)
    check_m0(pt)
    rho = pt.xnorm
    return CylindricalPoint(rho ** (params.alpha + 1.0), pt.y.copy(), pt.x / rho)


def to_cartesian(pt: CylindricalPoint, params: GrushinParams) -> CartesianPoint:
    _check_dims(pt, params)
    return CartesianPoint(pt.r ** (1.0 / (params.alpha + 1.0)) * pt.theta, pt.y.copy())


def homogeneous_norm(pt: CartesianPoint, params: GrushinParams) -> float:
    """(|x|^(2(a+1)) + |y|^2)^(1/(2(a+1)))."""
    a1 = params.alpha + 1.0
    s = pt.xnorm ** (2 * a1) + float(pt.y @ pt.y)
    return s ** (1.0 / (2 * a1))


def homogeneous_norm_array(x, y, alpha: float) -> np.ndarray:
    """Vectorised homogeneous norm over the leading axes of ``x`` and ``y``."""
    a1 = alpha + 1.0
    s = np.linalg.norm(x, axis=-1) ** (2 * a1) + np.sum(np.square(y), axis=-1)
    return s ** (1.0 / (2 * a1))


def dilate(t: float, pt: CartesianPoint, params: GrushinParams) -> CartesianPoint:
    if not t > 0:
        raise InvalidInput(f"dilation parameter must be positive, got {t}")
    return CartesianPoint(t * pt.x, t ** (params.alpha + 1.0) * pt.y)


@dataclass(frozen=True)
class TangentVector:
    base: Point
    components: np.ndarray = field(repr=False)

    def __post_init__(self):
        comps = _vec(self.components, "components")
        if isinstance(self.base, CartesianPoint):
            expected = self.base.x.size + self.base.y.size
            if comps.size != expected:
                raise InvalidInput(f"expected {expected} Cartesian components, got {comps.size}")
        else:
            q, p = self.base.y.size, self.base.theta.size
            if comps.size != 1 + q + p:
                raise InvalidInput(f"expected {1 + q + p} ambient cylindrical components, got {comps.size}")
            th = self.base.theta
            normal = float(comps[1 + q:] @ th)
            if abs(normal) > ORTHO_TOL * max(1.0, np.linalg.norm(comps)):
                raise InvalidInput(f"sphere part is not tangent to the sphere (<theta, dtheta> = {normal:.3g})")
            comps = comps.copy()
            comps[1 + q:] -= normal * th
        object.__setattr__(self, "components", comps)

    @property
    def chart(self) -> str:
        return "cartesian" if isinstance(self.base, CartesianPoint) else "cylindrical"

    # cylindrical accessors
    @property
    def dr(self) -> float:
        return float(self.components[0])

    @property
    def dy(self) -> np.ndarray:
        if self.chart == "cartesian":
            return self.components[self.base.x.size:]
        return self.components[1:1 + self.base.y.size]

    @property
    def dtheta(self) -> np.ndarray:
        return self.components[1 + self.base.y.size:]

    @property
    def dx(self) -> np.ndarray:
        return self.components[:self.base.x.size]

    def __add__(self, other: "TangentVector") -> "TangentVector":
        return TangentVector(self.base, self.components + other.components)

    def __mul__(self, c: float) -> "TangentVector":
        return TangentVector(self.base, c * self.components)

    __rmul__ = __mul__


def cylindrical_vector(base: CylindricalPoint, dr=0.0, dy=None, dtheta=None) -> TangentVector:
    q, p = base.y.size, base.theta.size
    dy = np.zeros(q) if dy is None else _vec(dy, "dy")
    dtheta = np.zeros(p) if dtheta is None else _vec(dtheta, "dtheta")
    return TangentVector(base, np.concatenate([[float(dr)], dy, dtheta]))


def split_tangent(v: TangentVector) -> tuple[TangentVector, TangentVector]:
    """Split a cylindrical tangent vector into its (r, y) part and its sphere part."""
    if v.chart != "cylindrical":
        raise InvalidInput("split_tangent needs a vector based at a cylindrical point")
    q = v.base.y.size
    vh = v.components.copy()
    vh[1 + q:] = 0.0
    vs = v.components - vh
    return TangentVector(v.base, vh), TangentVector(v.base, vs)


def sphere_basis(theta: np.ndarray) -> np.ndarray:
    """Orthonormal basis of theta-perp, returned as the columns of a p x (p-1) array.

    Deterministic: obtained from a QR factorisation of [theta | I].
    """
    p = theta.size
    q_mat, _ = np.linalg.qr(np.column_stack([theta, np.eye(p)]))
    basis = q_mat[:, 1:p]
    # QR may flip the first column; the rest are orthogonal to theta either way.
    return basis - np.outer(theta, theta @ basis)


def chart_pushforward(v: TangentVector, target_chart: str, params: GrushinParams) -> TangentVector:
    """Push a tangent vector through the chart change Cartesian <-> cylindrical."""
    a1 = params.alpha + 1.0
    if target_chart == v.chart:
        return v
    if target_chart == "cylindrical":
        base = to_cylindrical(v.base, params)
        rho = v.base.xnorm
        theta = base.theta
        dx = v.dx
        radial = float(theta @ dx)
        dr = a1 * rho ** params.alpha * radial
        dtheta = (dx - radial * theta) / rho
        return TangentVector(base, np.concatenate([[dr], v.dy, dtheta]))
    if target_chart == "cartesian":
        base = to_cartesian(v.base, params)
        r = v.base.r
        beta = 1.0 / a1
        dx = beta * r ** (beta - 1.0) * v.base.theta * v.dr + r ** beta * v.dtheta
        return TangentVector(base, np.concatenate([dx, v.dy]))
    raise InvalidInput(f"unknown chart {target_chart!r}")


def grushin_frame(pt: CartesianPoint, params: GrushinParams) -> np.ndarray:
    """Cartesian components of X_1..X_p, Y_1..Y_q (rows).

    The Y fields vanish on x = 0; the frame is defined on all of M.
    """
    p, q = params.p, params.q
    frame = np.zeros((p + q, p + q))
    frame[:p, :p] = np.eye(p)
    frame[p:, p:] = (params.alpha + 1.0) * pt.xnorm ** params.alpha * np.eye(q)
    return frame


def random_points(params: GrushinParams, count: int, rng: np.random.Generator,
                  box: float = 2.0, rmin: float | None = None, rmax: float | None = None) -> list[CartesianPoint]:
    """Seeded random points in M0.

    Without ``rmin``/``rmax`` the coordinates are uniform in ``[-box, box]`` and
    points violating the singular-set guard are redrawn.  With a radial range the
    cylindrical radius r is stratified over ``[rmin, rmax]`` (one draw per equal
    bin, order shuffled) and theta is uniform on the sphere.
    """
    pts = []
    if rmin is None:
        while len(pts) < count:
            x = rng.uniform(-box, box, params.p)
            y = rng.uniform(-box, box, params.q)
            pt = CartesianPoint(x, y)
            if pt.xnorm >= max(SINGULAR_GUARD * (1 + np.linalg.norm(y)), 1e-3):
                pts.append(pt)
    else:
        edges = np.linspace(rmin, rmax, count + 1)
        rs = rng.uniform(edges[:-1], edges[1:])
        rng.shuffle(rs)
        for r in rs:
            th = rng.standard_normal(params.p)
            th /= np.linalg.norm(th)
            y = rng.uniform(-box, box, params.q)
            pts.append(to_cartesian(CylindricalPoint(r, y, th), params))
    log.debug("drew %d points for %s", count, params)
    return pts
