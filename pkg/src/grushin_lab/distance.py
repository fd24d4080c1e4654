"""Control distance: admissible paths, geodesics, optimised upper bounds and conformality quotients."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import minimize

from .chart import CartesianPoint, CylindricalPoint, GrushinParams, TangentVector, chart_pushforward, grushin_frame, homogeneous_norm, to_cartesian
from .conformal import MapChain
from .errors import InvalidInput, LeftRiemannianRegion
from .metric import GrushinG, GrushinHat, christoffel_closed, grushin_laplacian

log = logging.getLogger(__name__)

GL_NODES, GL_WEIGHTS = np.polynomial.legendre.leggauss(8)
GL_NODES = 0.5 * (GL_NODES + 1)
GL_WEIGHTS = 0.5 * GL_WEIGHTS


@dataclass
class AdmissiblePath:
    """Piecewise-constant controls a (K x p), b (K x q) on the grid ``times`` (K + 1)."""
    start: CartesianPoint
    a: np.ndarray
    b: np.ndarray
    times: np.ndarray
    params: GrushinParams

    def __post_init__(self):
        self.a = np.atleast_2d(np.asarray(self.a, dtype=float))
        self.b = np.atleast_2d(np.asarray(self.b, dtype=float))
        self.times = np.asarray(self.times, dtype=float)
        K = self.times.size - 1
        if self.a.shape != (K, self.params.p) or self.b.shape != (K, self.params.q):
            raise InvalidInput("control arrays do not match the grid and (p, q)")
        if np.any(np.diff(self.times) <= 0):
            raise InvalidInput("time grid must be increasing")

    @classmethod
    def uniform(cls, start, a, b, params, T: float = 1.0):
        K = np.atleast_2d(a).shape[0]
        return cls(start, a, b, np.linspace(0.0, T, K + 1), params)

    @property
    def dt(self) -> np.ndarray:
        return np.diff(self.times)

    def concat(self, other: "AdmissiblePath") -> "AdmissiblePath":
        shift = self.times[-1] - other.times[0]
        return AdmissiblePath(self.start, np.vstack([self.a, other.a]), np.vstack([self.b, other.b]),
                              np.concatenate([self.times, other.times[1:] + shift]), self.params)


def _field(params, z, a, b):
    p = params.p
    x = z[:p]
    w = (params.alpha + 1) * np.linalg.norm(x) ** params.alpha if params.alpha > 0 else 1.0
    return np.concatenate([a, w * b])


def integrate_controls(path: AdmissiblePath, substeps: int = 16) -> np.ndarray:
    """Classical RK4 on each control segment; returns the states at every substep."""
    prm = path.params
    z = path.start.coords.copy()
    out = [z.copy()]
    for k, dt in enumerate(path.dt):
        a, b = path.a[k], path.b[k]
        h = dt / substeps
        for _ in range(substeps):
            k1 = _field(prm, z, a, b)
            k2 = _field(prm, z + 0.5 * h * k1, a, b)
            k3 = _field(prm, z + 0.5 * h * k2, a, b)
            k4 = _field(prm, z + h * k3, a, b)
            z = z + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
            out.append(z.copy())
    return np.array(out)


def path_length(path: AdmissiblePath) -> float:
    return float(np.sum(np.sqrt(np.sum(path.a ** 2, 1) + np.sum(path.b ** 2, 1)) * path.dt))


# ---------------------------------------------------------------------------
# exact segment map used by the optimiser
# ---------------------------------------------------------------------------

def _segment_data(params, x0, A, dt):
    """Knot x-values and the y-gain integrals I_k = int_0^1 phi(x_k + a_k dt s) ds with derivatives."""
    al, a1 = params.alpha, params.alpha + 1
    X = x0 + np.concatenate([np.zeros((1, x0.size)), np.cumsum(A * dt[:, None], 0)])[:-1]
    S = X[:, None, :] + (A * dt[:, None])[:, None, :] * GL_NODES[None, :, None]    # (K, m, p)
    nrm = np.linalg.norm(S, axis=2)
    phi = a1 * nrm ** al if al > 0 else np.ones_like(nrm)
    I = phi @ GL_WEIGHTS
    with np.errstate(divide="ignore", invalid="ignore"):
        dphi = np.where(nrm[..., None] > 0, (a1 * al * nrm ** (al - 2))[..., None] * S, 0.0)
    dI_dx = np.einsum("kmp,m->kp", dphi, GL_WEIGHTS)
    dI_da = np.einsum("kmp,m->kp", dphi, GL_WEIGHTS * GL_NODES) * dt[:, None]
    return X, I, dI_dx, dI_da


def _endpoint(params, z0, c, dt, jac=False):
    p, q = params.p, params.q
    K = dt.size
    C = c.reshape(K, p + q)
    A, Bc = C[:, :p], C[:, p:]
    x0, y0 = z0[:p], z0[p:]
    X, I, dIx, dIa = _segment_data(params, x0, A, dt)
    xe = x0 + A.T @ dt
    ye = y0 + Bc.T @ (dt * I)
    if not jac:
        return np.concatenate([xe, ye])
    J = np.zeros((p + q, K, p + q))
    J[:p, :, :p] = np.eye(p)[:, None, :] * dt[None, :, None]
    J[p:, :, p:] = np.eye(q)[:, None, :] * (dt * I)[None, :, None]
    # y_end depends on a_j through the knots x_k (k > j) and through segment j itself
    w = (Bc * dt[:, None])                                       # (K, q)
    G = np.einsum("kq,kp->kqp", w, dIx)                          # d y_end / d x_k
    tail = np.cumsum(G[::-1], 0)[::-1]                           # sum over k >= j
    tail = np.concatenate([tail[1:], np.zeros((1, q, p))])       # sum over k > j
    J[p:, :, :p] = (tail * dt[:, None, None] + np.einsum("kq,kp->kqp", w, dIa)).transpose(1, 0, 2)
    return np.concatenate([xe, ye]), J.reshape(p + q, K * (p + q))


@dataclass
class DistanceResult:
    d_hat: float
    path: AdmissiblePath
    converged: bool
    violation: float
    history: list = field(default_factory=list)


def _initial_guesses(params, z0, z1, K, rng, starts):
    p, q = params.p, params.q
    dt = np.full(K, 1.0 / K)
    dx = z1[:p] - z0[:p]
    dy = z1[p:] - z0[p:]
    guesses = []
    A = np.tile(dx, (K, 1))
    _, I, _, _ = _segment_data(params, z0[:p], A, dt)
    meanI = float(I @ dt)
    if meanI > 1e-6:
        guesses.append(np.hstack([A, np.tile(dy / meanI, (K, 1))]))
    # detour away from the singular set: leave along a unit direction, come back
    scale = max(np.linalg.norm(dy) ** (1 / (params.alpha + 1)), np.linalg.norm(dx), 1e-3)
    for s in range(max(starts - len(guesses), 1)):
        d = rng.standard_normal(p)
        base = z0[:p] + z1[:p]
        if np.linalg.norm(base) > 1e-9 and s == 0:
            d = base
        d /= np.linalg.norm(d)
        A = np.tile(dx, (K, 1)) + np.where(np.arange(K)[:, None] < K // 2, 1.0, -1.0) * 2 * scale * d
        A += 0.05 * scale * rng.standard_normal((K, p)) * (s > 0)
        A -= (A.T @ dt - dx)[None, :]
        _, I, _, _ = _segment_data(params, z0[:p], A, dt)
        Bc = np.tile(dy / max(I @ dt, 1e-9), (K, 1))
        guesses.append(np.hstack([A, Bc]))
    return guesses[:max(starts, 1)]


def distance_upper_bound(z0: CartesianPoint, z1: CartesianPoint, params: GrushinParams, K: int = 32,
                         starts: int = 3, seed: int = 0, maxiter: int = 500, warm: np.ndarray | None = None,
                         feas_tol: float = 1e-10) -> DistanceResult:
    """Shortest admissible path found by minimising energy under the endpoint constraint.

    The energy sum |c_k|^2 dt is minimised with SLSQP and an exact Jacobian; the
    returned value is the length of the best feasible path, an upper bound
    for the control distance up to quadrature error in the y-gain integrals.
    """
    za, zb = z0.coords, z1.coords
    dt = np.full(K, 1.0 / K)
    if np.allclose(za, zb, rtol=0, atol=0):
        zero = np.zeros((K, params.p + params.q))
        return DistanceResult(0.0, AdmissiblePath.uniform(z0, zero[:, :params.p], zero[:, params.p:], params), True, 0.0)
    rng = np.random.default_rng(seed)
    guesses = ([warm] if warm is not None else []) + _initial_guesses(params, za, zb, K, rng, starts)
    sep = max(np.linalg.norm(zb - za), 1e-12)
    best = None
    for g0 in guesses:
        c0 = g0.ravel()
        E0 = max(float(np.sum(g0 ** 2) / K), 1e-300)
        obj = lambda c: (float(c @ c) / K / E0, 2 * c / K / E0)
        cons = {"type": "eq",
                "fun": lambda c: (_endpoint(params, za, c, dt) - zb) / sep,
                "jac": lambda c: _endpoint(params, za, c, dt, jac=True)[1] / sep}
        res = minimize(lambda c: obj(c)[0], c0, jac=lambda c: obj(c)[1], constraints=[cons],
                       method="SLSQP", options={"maxiter": maxiter, "ftol": 1e-14})
        C = res.x.reshape(K, -1)
        viol = float(np.max(np.abs(_endpoint(params, za, res.x, dt) - zb)))
        path = AdmissiblePath.uniform(z0, C[:, :params.p], C[:, params.p:], params)
        L = path_length(path)
        ok = viol <= feas_tol * max(1.0, np.linalg.norm(zb))
        cand = DistanceResult(L, path, ok, viol)
        key = (not ok, L if ok else viol)
        if best is None or key < best_key:
            best, best_key = cand, key
    if not best.converged:
        log.warning("no feasible path found between %s and %s (violation %.3g)", za, zb, best.violation)
    return best


def refine_distance(z0, z1, params, levels: Sequence[int] = (8, 16, 32), **kw) -> list[DistanceResult]:
    """Distances on successively doubled grids, warm-started by splitting segments.

    The coarse path is feasible on the finer grid, so the reported sequence is
    non-increasing.
    """
    out, warm = [], None
    for K in levels:
        if warm is not None:
            warm = np.repeat(warm, K // warm.shape[0], axis=0)
        r = distance_upper_bound(z0, z1, params, K=K, warm=warm, **kw)
        if out and out[-1].converged and (not r.converged or r.d_hat > out[-1].d_hat):
            prev = out[-1]
            rep = K // prev.path.a.shape[0]
            pa = AdmissiblePath.uniform(z0, np.repeat(prev.path.a, rep, 0), np.repeat(prev.path.b, rep, 0), params)
            r = DistanceResult(prev.d_hat, pa, True, prev.violation)
        out.append(r)
        warm = np.hstack([r.path.a, r.path.b])
    return out


# ---------------------------------------------------------------------------
# geodesics
# ---------------------------------------------------------------------------

@dataclass
class GeodesicState:
    position: CylindricalPoint | CartesianPoint
    velocity: TangentVector
    metric: str = "hat"


@dataclass
class GeodesicTrajectory:
    s: np.ndarray
    z: np.ndarray
    v: np.ndarray
    speed_drift: float
    metric: str


def geodesic_ivp(state: GeodesicState, length: float, params: GrushinParams, guard: float = 1e-3,
                 rtol: float = 1e-12, atol: float = 1e-12, samples: int = 201) -> GeodesicTrajectory:
    """Integrate the geodesic equations in Cartesian coordinates with closed-form Christoffels."""
    M = GrushinHat(params) if state.metric == "hat" else GrushinG(params)
    pos = state.position
    vel = state.velocity
    if isinstance(pos, CylindricalPoint):
        pos = to_cartesian(pos, params)
    if vel.chart == "cylindrical":
        vel = chart_pushforward(vel, "cartesian", params)
    z0, v0 = pos.coords, vel.components
    n, p = params.n, params.p

    def rhs(s, y):
        z, v = y[:n], y[n:]
        G = christoffel_closed(M, CartesianPoint.from_coords(z, p))
        return np.concatenate([v, -np.einsum("kij,i,j->k", G, v, v)])

    def hit(s, y):
        return np.linalg.norm(y[:p]) - guard
    hit.terminal = True

    sol = solve_ivp(rhs, (0.0, length), np.concatenate([z0, v0]), method="DOP853", rtol=rtol, atol=atol,
                    events=hit, dense_output=True)
    if sol.status == 1:
        raise LeftRiemannianRegion(f"geodesic reached |x| = {guard} at s = {sol.t_events[0][0]:.4g}")
    s = np.linspace(0.0, length, samples)
    Y = sol.sol(s)
    Z, V = Y[:n].T, Y[n:].T
    sp = np.array([v @ M.at(z) @ v for z, v in zip(Z, V)])
    drift = float(np.max(np.abs(sp - sp[0])) / sp[0])
    return GeodesicTrajectory(s, Z, V, drift, state.metric)


def leaf_competitor_length(z0: CartesianPoint, z1: CartesianPoint, params: GrushinParams, nodes: int = 400) -> float:
    """Control length of the path moving (|x|, y) linearly at fixed theta (same-theta pairs only)."""
    th0, th1 = z0.x / z0.xnorm, z1.x / z1.xnorm
    if np.linalg.norm(th0 - th1) > 1e-12:
        raise InvalidInput("points must share theta")
    s = (np.arange(nodes) + 0.5) / nodes
    rho = z0.xnorm + s * (z1.xnorm - z0.xnorm)
    dy = z1.y - z0.y
    w = (params.alpha + 1) * rho ** params.alpha
    return float(np.mean(np.sqrt((z1.xnorm - z0.xnorm) ** 2 + (dy @ dy) / w ** 2)))


# ---------------------------------------------------------------------------
# conformality quotient
# ---------------------------------------------------------------------------

QUOTIENT_COLUMNS = ("epsilon", "direction_id", "quotient", "extrapolated", "target", "rel_error")


@dataclass
class QuotientTable:
    rows: list
    target: float

    def worst_error(self) -> dict:
        out = {}
        for r in self.rows:
            out[r["epsilon"]] = max(out.get(r["epsilon"], 0.0), r["rel_error"])
        return out

    def worst_extrapolated_error(self) -> float:
        vals = [abs(r["extrapolated"] - self.target) / abs(self.target) for r in self.rows
                if np.isfinite(r["extrapolated"])]
        return float(max(vals))

    def decay_factors(self) -> list[float]:
        w = self.worst_error()
        eps = sorted(w, reverse=True)
        return [w[b] / w[a] for a, b in zip(eps, eps[1:])]

    def to_csv(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            wr = csv.DictWriter(fh, fieldnames=QUOTIENT_COLUMNS)
            wr.writeheader()
            for r in self.rows:
                wr.writerow({k: (f"{r[k]:.12g}" if isinstance(r[k], float) else r[k]) for k in QUOTIENT_COLUMNS})
        return path


def quotient_directions(params: GrushinParams, pt: CartesianPoint, rng: np.random.Generator, extra: int = 4) -> np.ndarray:
    """Control-space unit directions: the Grushin frame plus ``extra`` seeded random ones."""
    n = params.n
    R = rng.standard_normal((extra, n))
    R /= np.linalg.norm(R, axis=1, keepdims=True)
    return np.vstack([np.eye(n), R])


def conformality_quotient(chain: MapChain, z: CartesianPoint, epsilons: Sequence[float], target: float | None = None,
                          seed: int = 0, extra: int = 4, K: int = 32, starts: int = 2) -> QuotientTable:
    """d_hat(f(zeta), f(z)) / d_hat(zeta, z) for zeta = exp of a short control segment from z.

    zeta_eps is the endpoint of the unit-speed admissible path with constant
    control eps * c, so d(zeta, z) <= eps with equality to first order.
    Richardson extrapolation assumes an O(eps) bias: 2 q(eps/2) - q(eps).
    """
    prm = chain.params
    eps = sorted(epsilons, reverse=True)
    if target is None:
        target = 1.0 / chain.factor(z, "hat")
    rng = np.random.default_rng(seed)
    dirs = quotient_directions(prm, z, rng, extra)
    fz = chain.apply(z)
    q = {}
    for e in eps:
        for j, c in enumerate(dirs):
            path = AdmissiblePath.uniform(z, (e * c[:prm.p])[None, :], (e * c[prm.p:])[None, :], prm)
            zeta = CartesianPoint.from_coords(integrate_controls(path, substeps=64)[-1], prm.p)
            d0 = distance_upper_bound(z, zeta, prm, K=K, starts=starts, seed=seed + j)
            d1 = distance_upper_bound(fz, chain.apply(zeta), prm, K=K, starts=starts, seed=seed + j)
            q[(e, j)] = d1.d_hat / d0.d_hat
    rows = []
    for i, e in enumerate(eps):
        for j in range(len(dirs)):
            ext = 2 * q[(eps[i + 1], j)] - q[(e, j)] if i + 1 < len(eps) else float("nan")
            rows.append(dict(epsilon=float(e), direction_id=j, quotient=float(q[(e, j)]), extrapolated=float(ext),
                             target=float(target), rel_error=float(abs(q[(e, j)] - target) / abs(target))))
    return QuotientTable(rows, float(target))


# ---------------------------------------------------------------------------
# fundamental solution
# ---------------------------------------------------------------------------

def kernel(params: GrushinParams):
    """Gamma(z) = ||z||^(2 - Q), vectorised over rows."""
    a1 = params.alpha + 1
    p = params.p
    e = (2 - params.Q) / (2 * a1)

    def G(Z):
        Z = np.atleast_2d(Z)
        return (np.linalg.norm(Z[:, :p], axis=1) ** (2 * a1) + np.sum(Z[:, p:] ** 2, 1)) ** e
    return G


def harmonic_kernel_residual(params: GrushinParams, pt: CartesianPoint, step: float = 5e-3) -> float:
    """|Delta_a Gamma(pt)| * ||pt||^Q, i.e. the residual in units of the natural scale."""
    nz = homogeneous_norm(pt, params)
    if nz < 0.1:
        raise InvalidInput("point too close to the origin")
    return abs(grushin_laplacian(kernel(params), pt, params, step=step)) * nz ** params.Q
