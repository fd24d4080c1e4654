"""Verification suites run by the command-line verifier.

Every check reduces a batch of per-point residuals to one record.  Per-point
work goes through ``Context.map`` so it can fan out to a process pool; results
are collected in input order, which keeps reports deterministic.
"""
from __future__ import annotations

import logging
import math
import shlex
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import partial
from pathlib import Path

import numpy as np

from . import conformal as cf
from . import distance as dl
from . import umbilic as um
from .chart import (
    CartesianPoint,
    CylindricalPoint,
    GrushinParams,
    TangentVector,
    homogeneous_norm,
    random_points,
    sphere_basis,
    to_cartesian,
    to_cylindrical,
)
from .config import SUITES, SuiteConfig
from .errors import FitFailed
from .metric import (
    ConformalScaled,
    GrushinG,
    christoffel_closed,
    christoffel_fd,
    curvature_fd,
    riemann_fd,
    riemann_tensor_closed,
    ricci_tensor_closed,
    scalar_closed,
    sphere_product,
    warped_riemann_tensor,
    weyl_sectional_constant,
    weyl_tensor_closed,
)
from .report import CheckRecord, SuiteReport, digest
from .tensors import max_trace, validate_symmetries, weyl_tensor

log = logging.getLogger(__name__)

SAMPLE_RMIN, SAMPLE_RMAX = 0.5, 2.0
QUOTIENT_EPS = (1e-1, 5e-2, 2.5e-2, 1.25e-2)

DEFAULT_TOLERANCES = {
    "christoffel_fd_vs_closed": 1e-6,
    "riemann_fd_vs_closed": 1e-5,
    "ricci_fd_vs_closed": 1e-5,
    "scalar_fd_vs_closed": 1e-5,
    "scalar_unit_radius": 1e-5,
    "scalar_inverse_square_law": 1e-8,
    "curvature_symmetries": 1e-8,
    "flatness_p2": 1e-8,
    "weyl_trace_free": 1e-9,
    "weyl_conformal_invariance": 1e-4,
    "sphere_product_curvature": 1e-6,
    "cone_mode_agreement": 0.0,
    "cone_step1_witness": 1e-6,
    "weyl_sectional_ratio": 1e-6,
    "sphere_product_cones": 0.0,
    "cone_invariance_pattern": 0.0,
    "cr_isometry": 1e-8,
    "cr_dilation": 1e-8,
    "cr_inversion": 1e-8,
    "cr_hat_isometry": 1e-8,
    "cr_hat_dilation": 1e-8,
    "cr_hat_inversion": 1e-8,
    "inversion_factor_g": 1e-8,
    "inversion_factor_hat": 1e-8,
    "inversion_factor_hat_axis": 1e-8,
    "factor_cocycle": 1e-8,
    "jacobian_fd": 1e-7,
    "ricci_preservation": 1e-8,
    "nonconformal_ricci_detected": 1e-2,
    "factor_pde_sphere_full": 1e-8,
    "factor_pde_sphere_trace": 1e-8,
    "factor_pde_violating_trace": 0.1,
    "factor_model_fit": 1e-7,
    "classification_fit": 1e-6,
    "nonconformal_rejected": 0.0,
    "a1_curvature": 1e-8,
    "a1_umbilic": 1e-8,
    "a2_geodesic": 1e-8,
    "b_geodesic": 1e-8,
    "codazzi": 1e-5,
    "inversion_image_family": 1e-6,
    "inversion_image_umbilic": 1e-6,
    "normal_in_cone": 0.0,
    "quotient_inversion_extrapolated": 0.05,
    "quotient_inversion_decay": 0.7,
    "quotient_dilation": 0.02,
    "quotient_isometry": 0.02,
    "harmonic_kernel": 1e-6,
    "newtonian_kernel": 1e-8,
    "distance_x_aligned": 1e-4,
}

ANCHORS = {
    "curvature": "closed-form curvature of the warped metric g",
    "flat": "g is flat when p = 2",
    "weyl": "Weyl tensor is trace free and conformally covariant",
    "product": "S^k x R^m product curvature and cones",
    "cones": "cone U_P equals T_P S union T_P H for p >= 3",
    "sectional": "Weyl sectional ratio C0 r^-2 on sphere planes",
    "cr": "Cauchy-Riemann system g(f_*U, f_*V) = u^-2 g(U, V)",
    "factor": "inversion factor ||z||^(2(a+1)) in g and ||z||^2 in g-hat",
    "cocycle": "factor cocycle u_(F o G) = u_F(G) u_G",
    "ricci": "Ricci-preserving conformal maps",
    "pde": "reduced conformal-factor equations and their trace",
    "classify": "classification f = Gamma o delta o (inversion) o translation",
    "umbilic": "umbilical families A1 / A2 / B",
    "codazzi": "Codazzi identity for umbilical hypersurfaces",
    "quotient": "metric conformality quotient limit",
    "kernel": "||z||^(2-Q) is annihilated by the Grushin operator",
    "distance": "control distance of admissible paths",
}


def sample_points(cfg: SuiteConfig, count: int | None = None, rng: np.random.Generator | None = None):
    """Deterministic points in M0 with r stratified over [0.5, 2]."""
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    return random_points(cfg.params, cfg.points if count is None else count, rng,
                         rmin=SAMPLE_RMIN, rmax=SAMPLE_RMAX)


def repro_command(cfg: SuiteConfig, suite: str) -> str:
    args = ["verify", "--suite", suite, "--p", str(cfg.p), "--q", str(cfg.q), "--alpha", repr(cfg.alpha),
            "--seed", str(cfg.seed), "--points", str(cfg.points), "--tol-scale", repr(cfg.tol_scale)]
    return " ".join(shlex.quote(a) for a in args)


@dataclass
class Context:
    cfg: SuiteConfig
    suite: str
    pool: ProcessPoolExecutor | None = None
    records: list = field(default_factory=list)

    @property
    def params(self) -> GrushinParams:
        return self.cfg.params

    def rng(self, tag: str) -> np.random.Generator:
        """Independent stream per (seed, suite, tag), unaffected by which suites run."""
        key = [self.cfg.seed, SUITES.index(self.suite)] + [ord(c) for c in tag]
        return np.random.default_rng(key)

    def map(self, fn, items) -> list:
        items = list(items)
        if self.pool is None or len(items) < 4:
            return [fn(it) for it in items]
        chunk = max(1, len(items) // (4 * (self.pool._max_workers or 1)))
        return list(self.pool.map(fn, items, chunksize=chunk))

    def tol(self, check_id: str, comparator: str = "<=") -> float:
        base = self.cfg.tolerances.get(check_id, DEFAULT_TOLERANCES[check_id])
        return base * self.cfg.tol_scale if comparator == "<=" else base

    def record(self, check_id: str, anchor: str, residual, inputs=(), comparator: str = "<=",
               artifacts=(), reason: str = "") -> CheckRecord:
        tol = self.tol(check_id, comparator)
        residual = float(residual)
        if not math.isfinite(residual):
            ok = False
        elif comparator == "<=":
            ok = residual <= tol
        else:
            ok = residual >= tol
        rec = CheckRecord(self.suite, check_id, ANCHORS[anchor], digest(check_id, *inputs), residual,
                          comparator, tol, "PASS" if ok else "FAIL", reason,
                          repro_command(self.cfg, self.suite), list(artifacts))
        self.records.append(rec)
        return rec

    def skip(self, check_id: str, anchor: str, reason: str) -> CheckRecord:
        rec = CheckRecord(self.suite, check_id, ANCHORS[anchor], digest(check_id), None, "", None, "SKIP",
                          reason, "", [])
        self.records.append(rec)
        return rec


def _coords(pts) -> np.ndarray:
    return np.array([p.coords for p in pts])


def _rel(a, b) -> float:
    scale = float(np.max(np.abs(b)))
    return float(np.max(np.abs(a - b))) / (scale if scale > 0 else 1.0)


# ---------------------------------------------------------------------------
# curvature
# ---------------------------------------------------------------------------

def _curvature_point(params: GrushinParams, z: np.ndarray):
    M = GrushinG(params)
    pt = CartesianPoint.from_coords(z, params.p)
    chris = _rel(christoffel_fd(M, z, order=4), christoffel_closed(M, pt))
    g, R, ric, scal = curvature_fd(M, z)
    rep = validate_symmetries(R)
    sym = max(rep.residuals.values())
    if params.p == 2:
        # R is pure round-off here, so relative residuals carry no information
        sym *= rep.scale
        return chris, float(np.max(np.abs(R))), 0.0, 0.0, sym
    s_exact = scalar_closed(params, to_cylindrical(pt, params).r)
    return (chris, _rel(R, riemann_tensor_closed(params, pt)), _rel(ric, ricci_tensor_closed(params, pt)),
            abs(scal - s_exact) / abs(s_exact), sym)


def _fd_scalar_at(params, r, y, theta):
    pt = to_cartesian(CylindricalPoint(r, y, theta), params)
    return curvature_fd(GrushinG(params), pt.coords)[3]


def _scaling_point(params: GrushinParams, z: np.ndarray):
    cyl = to_cylindrical(CartesianPoint.from_coords(z, params.p), params)
    s1 = _fd_scalar_at(params, cyl.r, cyl.y, cyl.theta)
    s2 = _fd_scalar_at(params, 2 * cyl.r, cyl.y, cyl.theta)
    return abs(4 * s2 - s1) / abs(s1)


def _weyl_trace_point(params, z):
    pt = CartesianPoint.from_coords(z, params.p)
    W = weyl_tensor_closed(params, pt)
    return max_trace(W, GrushinG(params).at(z)) / max(float(np.max(np.abs(W))), 1e-300)


def smooth_factor(k: int, n: int):
    """Seeded smooth positive factor exp(0.3 sin(<w, z> + phi)) with |w| ~ 1."""
    r = np.random.default_rng(1000 + k)
    w = r.standard_normal(n) / np.sqrt(n)
    phi = r.uniform(0, 2 * np.pi)
    return _SmoothFactor(w, phi)


@dataclass(frozen=True)
class _SmoothFactor:
    w: np.ndarray
    phi: float

    def __call__(self, Z):
        Z = np.atleast_2d(Z)
        return np.exp(0.3 * np.sin(Z @ self.w + self.phi))


def _weyl_conformal_point(params, z, k):
    base = GrushinG(params)
    u = smooth_factor(k, params.n)
    M = ConformalScaled(base, u)
    W = weyl_tensor(riemann_fd(M, z), M.at(z))
    W0 = weyl_tensor_closed(params, CartesianPoint.from_coords(z, params.p))
    return _rel(W, float(u(z[None, :])[0]) ** -2 * W0)


def _sphere_product_point(z):
    W = sphere_product(3, 2)
    g = W.at(z)
    R = warped_riemann_tensor(W, z)
    exact = np.zeros_like(R)
    gs = g[2:, 2:]
    exact[2:, 2:, 2:, 2:] = np.einsum("ac,bd->abcd", gs, gs) - np.einsum("ad,bc->abcd", gs, gs)
    return max(_rel(R, exact), _rel(riemann_fd(W, z), exact))


def curvature_suite(ctx: Context):
    prm = ctx.params
    pts = sample_points(ctx.cfg, rng=ctx.rng("points"))
    Z = _coords(pts)
    res = np.array(ctx.map(partial(_curvature_point, prm), Z))
    ctx.record("christoffel_fd_vs_closed", "curvature", res[:, 0].max(), [Z])
    ctx.record("curvature_symmetries", "curvature", res[:, 4].max(), [Z])
    if prm.p == 2:
        ctx.record("flatness_p2", "flat", res[:, 1].max(), [Z])
        for cid in ("riemann_fd_vs_closed", "ricci_fd_vs_closed", "scalar_fd_vs_closed", "scalar_unit_radius",
                    "scalar_inverse_square_law", "weyl_trace_free", "weyl_conformal_invariance"):
            ctx.skip(cid, "curvature", "g is flat for p=2; only the flatness check applies")
    else:
        ctx.record("riemann_fd_vs_closed", "curvature", res[:, 1].max(), [Z])
        ctx.record("ricci_fd_vs_closed", "curvature", res[:, 2].max(), [Z])
        ctx.record("scalar_fd_vs_closed", "curvature", res[:, 3].max(), [Z])
        th = np.zeros(prm.p)
        th[-1] = 1.0
        s1 = _fd_scalar_at(prm, 1.0, np.zeros(prm.q), th)
        ctx.record("scalar_unit_radius", "curvature", abs(s1 - scalar_closed(prm, 1.0)) / abs(scalar_closed(prm, 1.0)))
        sub = Z[: max(4, len(Z) // 10)]
        ctx.record("scalar_inverse_square_law", "curvature", max(ctx.map(partial(_scaling_point, prm), sub)), [sub])
        if prm.n >= 4:
            ctx.record("weyl_trace_free", "weyl", max(ctx.map(partial(_weyl_trace_point, prm), Z)), [Z])
            sub = Z[: max(4, len(Z) // 20)]
            errs = [max(ctx.map(partial(_weyl_conformal_point, prm, k=k), sub)) for k in range(5)]
            ctx.record("weyl_conformal_invariance", "weyl", max(errs), [sub])
        else:
            ctx.skip("weyl_trace_free", "weyl", "requires n>=4")
            ctx.skip("weyl_conformal_invariance", "weyl", "requires n>=4")
    rng = ctx.rng("product")
    PZ = rng.uniform(-0.8, 0.8, (max(4, len(Z) // 10), 5))
    ctx.record("sphere_product_curvature", "product", max(ctx.map(_sphere_product_point, PZ)), [PZ])


# ---------------------------------------------------------------------------
# cones
# ---------------------------------------------------------------------------

def frame_to_tangent(params: GrushinParams, cyl: CylindricalPoint, c: np.ndarray) -> TangentVector:
    E = sphere_basis(cyl.theta)
    q = params.q
    dtheta = E @ c[1 + q:] / ((params.alpha + 1) * cyl.r)
    return TangentVector(cyl, np.concatenate([[c[0]], c[1:1 + q], dtheta]))


def random_frame_vector(params: GrushinParams, rng: np.random.Generator, kind: int) -> np.ndarray:
    """kind 0: horizontal, 1: sphere, 2: mixed."""
    c = rng.standard_normal(params.n)
    if kind == 0:
        c[1 + params.q:] = 0
    elif kind == 1:
        c[:1 + params.q] = 0
    return c / np.linalg.norm(c)


def _cone_pair(params, item):
    z, c, seed = item
    cyl = to_cylindrical(CartesianPoint.from_coords(z, params.p), params)
    X = frame_to_tangent(params, cyl, c)
    closed, _ = cf.cone_membership(params, cyl, X, "closed_form")
    search, wit = cf.cone_membership(params, cyl, X, "weyl_search", rng=np.random.default_rng(seed))
    return closed == search, wit.value, closed


def _sectional_point(params, item):
    z, seed = item
    cyl = to_cylindrical(CartesianPoint.from_coords(z, params.p), params)
    r = np.random.default_rng(seed)
    E = sphere_basis(cyl.theta)
    A = np.linalg.qr(r.standard_normal((params.p - 1, 2)))[0]
    X = TangentVector(cyl, np.concatenate([np.zeros(1 + params.q), E @ A[:, 0] * r.uniform(0.5, 2)]))
    Y = TangentVector(cyl, np.concatenate([np.zeros(1 + params.q), E @ A[:, 1] * r.uniform(0.5, 2)]))
    target = weyl_sectional_constant(params) / cyl.r ** 2
    return abs(cf.weyl_sectional_ratio(params, cyl, X, Y) - target) / abs(target)


def _product_cone_pair(item):
    z, c, seed = item
    W = sphere_product(3, 2)
    a, _ = cf.cone_membership_warped(W, z, c, "closed_form")
    b, _ = cf.cone_membership_warped(W, z, c, "weyl_search", rng=np.random.default_rng(seed))
    return a == b


def _pattern_point(params, item):
    z, seed = item
    chain, _ = cf.random_classification_chain(params, np.random.default_rng(seed))
    pt = CartesianPoint.from_coords(z, params.p)
    if not chain.apply(pt).in_m0():
        return True
    pattern, _, admissible = cf.cone_invariance_check(chain, pt)
    return pattern == "SS-HH" and admissible


def cones_suite(ctx: Context):
    prm = ctx.params
    if not prm.supports_cones:
        reason = "requires p≥3"
        for cid in ("cone_mode_agreement", "cone_step1_witness", "weyl_sectional_ratio", "cone_invariance_pattern"):
            ctx.skip(cid, "cones", reason)
        pts = sample_points(ctx.cfg, rng=ctx.rng("points"))
        Z = _coords(pts)
        res = ctx.map(partial(_curvature_point, prm), Z)
        ctx.record("flatness_p2", "flat", max(r[1] for r in res), [Z])
    else:
        rng = ctx.rng("pairs")
        pts = sample_points(ctx.cfg, 5 * ctx.cfg.points, rng)
        items = [(p.coords, random_frame_vector(prm, rng, i % 3), int(rng.integers(2 ** 32))) for i, p in enumerate(pts)]
        res = ctx.map(partial(_cone_pair, prm), items)
        disagree = sum(not r[0] for r in res)
        ctx.record("cone_mode_agreement", "cones", disagree / len(res), [_coords(pts)],
                   reason=f"{disagree} of {len(res)} pairs disagree")
        wit = min(r[1] for r, it in zip(res, range(len(res))) if it % 3 == 2)
        ctx.record("cone_step1_witness", "cones", wit, [_coords(pts)], comparator=">=")
        if prm.alpha > 0:
            sp = sample_points(ctx.cfg, rng=ctx.rng("sectional"))
            items = [(p.coords, 7 * i + 1) for i, p in enumerate(sp)]
            ctx.record("weyl_sectional_ratio", "sectional", max(ctx.map(partial(_sectional_point, prm), items)),
                       [_coords(sp)])
        else:
            ctx.skip("weyl_sectional_ratio", "sectional", "C0 = 0 when alpha = 0")
        sp = sample_points(ctx.cfg, max(10, ctx.cfg.points // 4), ctx.rng("pattern"))
        items = [(p.coords, 11 * i + 3) for i, p in enumerate(sp)]
        bad = sum(not ok for ok in ctx.map(partial(_pattern_point, prm), items))
        ctx.record("cone_invariance_pattern", "cones", bad, [_coords(sp)])
    rng = ctx.rng("product")
    n = max(30, ctx.cfg.points)
    items = [(rng.uniform(-0.8, 0.8, 5), _product_vector(rng, i % 3), int(rng.integers(2 ** 32))) for i in range(n)]
    bad = sum(not ok for ok in ctx.map(_product_cone_pair, items))
    ctx.record("sphere_product_cones", "product", bad, [np.array([it[0] for it in items])])


def _product_vector(rng, kind):
    c = rng.standard_normal(5)
    if kind == 0:
        c[2:] = 0
    elif kind == 1:
        c[:2] = 0
    return c / np.linalg.norm(c)


# ---------------------------------------------------------------------------
# conformal maps
# ---------------------------------------------------------------------------

def elementary_chains(params: GrushinParams, rng: np.random.Generator) -> dict:
    A = cf.random_orthogonal(params.p, rng)
    B = cf.random_orthogonal(params.q, rng)
    return {
        "isometry": cf.MapChain([cf.Isometry(A, B, rng.uniform(-1, 1, params.q))], params),
        "dilation": cf.MapChain([cf.Dilation(float(rng.uniform(0.5, 2.0)))], params),
        "inversion": cf.MapChain([cf.Inversion()], params),
    }


def axis_points(params: GrushinParams, count: int, rng: np.random.Generator):
    """Points (0, y) with |y| in [0.5, 2]."""
    out = []
    for _ in range(count):
        y = rng.standard_normal(params.q)
        y *= rng.uniform(0.5, 2.0) / np.linalg.norm(y)
        out.append(CartesianPoint(np.zeros(params.p), y))
    return out


def _cr_point(params, item):
    z, seed = item
    pt = CartesianPoint.from_coords(z, params.p)
    rng = np.random.default_rng(seed)
    chains = elementary_chains(params, rng)
    out = {}
    for name, ch in chains.items():
        u, res = cf.cr_residual(ch, pt)
        uh, resh = cf.cr_residual_hat(ch, pt)
        out[name] = (res, resh)
        if name == "inversion":
            nz = homogeneous_norm(pt, params)
            out["factor_g"] = abs(u / nz ** (2 * (params.alpha + 1)) - 1)
            out["factor_hat"] = abs(uh / nz ** 2 - 1)
    # cocycle with cr-extracted factors
    F, _ = cf.random_classification_chain(params, rng)
    G, _ = cf.random_classification_chain(params, rng)
    FG = G.then(F)
    uFG = cf.cr_residual(FG, pt)[0]
    uF = cf.cr_residual(F, G.apply(pt))[0]
    uG = cf.cr_residual(G, pt)[0]
    out["cocycle"] = abs(uFG - uF * uG) / abs(uFG)
    out["jacobian"] = _rel(FG.jacobian(pt), cf.jacobian_fd(FG, pt))
    U, V = rng.standard_normal(params.n), rng.standard_normal(params.n)
    out["ricci"] = cf.ricci_preservation_check(F, pt, U, V)
    return out


def _axis_factor(params, z):
    pt = CartesianPoint.from_coords(z, params.p)
    uh, res = cf.cr_residual_hat(cf.MapChain([cf.Inversion()], params), pt)
    return max(abs(uh / homogeneous_norm(pt, params) ** 2 - 1), res)


def _stretch(z):
    z = np.array(z, dtype=float)
    z[0] *= 1.5
    return z


def _classification_trial(params, seed):
    rng = np.random.default_rng(seed)
    chain, truth = cf.random_classification_chain(params, rng, s=[0, -2][seed % 2])
    m = 2 * (params.p ** 2 + params.q ** 2 + params.q + 3)
    pts = random_points(params, m, rng, rmin=SAMPLE_RMIN, rmax=SAMPLE_RMAX)
    fit = cf.fit_classification([(z, chain.apply(z)) for z in pts], params)
    perr = max(abs(fit.t - truth["t"]), float(np.max(np.abs(fit.b - truth["b"]))),
               float(np.max(np.abs(fit.A - truth["A"]))), float(np.max(np.abs(fit.B - truth["B"]))),
               float(fit.s != truth["s"]))
    # factor model fit on cr-extracted factors
    us = [cf.cr_residual(chain, z)[0] for z in pts]
    ff = cf.fit_factor_model(pts, us, params)
    # a perturbed map must be rejected
    bad = [(z, CartesianPoint(w.x, w.y + 1e-2 * np.sin(z.x[0])))
           for z, w in ((z, chain.apply(z)) for z in pts)]
    try:
        cf.fit_classification(bad, params)
        rejected = False
    except FitFailed:
        rejected = True
    return max(fit.residual, perr), ff.rel_error, rejected


def conformal_suite(ctx: Context):
    prm = ctx.params
    pts = sample_points(ctx.cfg, rng=ctx.rng("points"))
    Z = _coords(pts)
    items = [(z, 13 * i + 5) for i, z in enumerate(Z)]
    res = ctx.map(partial(_cr_point, prm), items)
    for name in ("isometry", "dilation", "inversion"):
        ctx.record(f"cr_{name}", "cr", max(r[name][0] for r in res), [Z])
        ctx.record(f"cr_hat_{name}", "cr", max(r[name][1] for r in res), [Z])
    ctx.record("inversion_factor_g", "factor", max(r["factor_g"] for r in res), [Z])
    ctx.record("inversion_factor_hat", "factor", max(r["factor_hat"] for r in res), [Z])
    ax = _coords(axis_points(prm, max(10, ctx.cfg.points // 10), ctx.rng("axis")))
    ctx.record("inversion_factor_hat_axis", "factor", max(ctx.map(partial(_axis_factor, prm), ax)), [ax])
    ctx.record("factor_cocycle", "cocycle", max(r["cocycle"] for r in res), [Z])
    ctx.record("jacobian_fd", "cr", max(r["jacobian"] for r in res), [Z])
    ctx.record("ricci_preservation", "ricci", max(r["ricci"] for r in res), [Z])

    if prm.p == 2:
        ctx.skip("nonconformal_ricci_detected", "ricci", "Ric vanishes identically for p=2")
    else:
        _nonconformal_ricci(ctx, pts)
    _factor_and_fit_checks(ctx, pts, Z)


def _nonconformal_ricci(ctx: Context, pts):
    """An injected x_1 stretch must visibly break Ricci preservation."""
    prm = ctx.params
    Z = _coords(pts)
    bad = cf.MapChain([cf.CustomMap(_stretch, "stretch")], prm)
    worst = np.inf
    for pt in pts[:20]:
        th = pt.x / pt.xnorm
        E = sphere_basis(th)
        vals = [cf.ricci_preservation_check(bad, pt, np.r_[E[:, k], np.zeros(prm.q)], np.r_[E[:, k], np.zeros(prm.q)])
                for k in range(prm.p - 1)] + [cf.ricci_preservation_check(bad, pt, np.r_[th, np.zeros(prm.q)],
                                                                          np.r_[th, np.zeros(prm.q)])]
        worst = min(worst, max(vals))
    ctx.record("nonconformal_ricci_detected", "ricci", worst, [Z[:20]], comparator=">=")


def _factor_and_fit_checks(ctx: Context, pts, Z):
    prm = ctx.params

    model = cf.ConformalFactorModel.sphere(prm, 0.5, np.ones(prm.q))
    pde = [cf.factor_pde_residual(model, pt) for pt in pts]
    ctx.record("factor_pde_sphere_full", "pde", max(r[0] for r in pde), [Z])
    ctx.record("factor_pde_sphere_trace", "pde", max(r[1] for r in pde), [Z])
    viol = cf.ConformalFactorModel(prm, H=2.0, M=np.zeros(prm.q), N=1.0)
    th = np.zeros(prm.p)
    th[0] = 1.0
    at = to_cartesian(CylindricalPoint(1.0, np.zeros(prm.q), th), prm)
    ctx.record("factor_pde_violating_trace", "pde", cf.factor_pde_residual(viol, at)[1], comparator=">=")

    seeds = [int(ctx.cfg.seed * 1000 + k) % 2 ** 32 for k in range(50)]
    trials = ctx.map(partial(_classification_trial, prm), seeds)
    ctx.record("classification_fit", "classify", max(t[0] for t in trials), [np.array(seeds, float)])
    ctx.record("factor_model_fit", "pde", max(t[1] for t in trials), [np.array(seeds, float)])
    ctx.record("nonconformal_rejected", "classify", sum(not t[2] for t in trials), [np.array(seeds, float)])


# ---------------------------------------------------------------------------
# umbilic
# ---------------------------------------------------------------------------

def _family_draws(params, rng, count):
    out = []
    for _ in range(count):
        out.append(("A1", um.A1(rng.uniform(-1, 1, params.q), float(rng.uniform(0.5, 2.0)))))
        out.append(("A2", um.A2(rng.standard_normal(params.q), float(rng.uniform(-1, 1)))))
        out.append(("B", um.B(rng.standard_normal(params.p))))
    return out


def _umbilic_family(params, item):
    name, fam, seed, npts = item
    rng = np.random.default_rng(seed)
    spec = um.surface_of(fam, params)
    pts = um.sample_surface(fam, params, npts, rng)
    reps = [um.shape_operator(spec, z) for z in pts]
    umb = max(r.residual for r in reps)
    if name == "A1":
        curv = max(float(np.max(np.abs(r.principal - 1 / fam.c))) for r in reps)
    else:
        curv = max(float(np.max(np.abs(r.principal))) for r in reps)
    cone_bad = 0
    if params.supports_cones:
        cone_bad = sum(um.cone_obstruction(params, z, um.unit_normal(spec, z)) for z in pts)
    cod = 0.0
    for z, r in list(zip(pts, reps))[:3]:
        T = r.frame
        trip = (T[0], T[1], T[2]) if len(T) >= 3 else (T[0], T[-1], T[0])
        cod = max(cod, um.codazzi_residual(spec, z, *trip))
    return umb, curv, cone_bad, cod


def _inversion_image(params, item):
    fam, seed = item
    rng = np.random.default_rng(seed)
    phi = cf.MapChain([cf.Inversion()], params)
    pts = um.sample_surface(fam, params, 30, rng)
    img = [phi.apply(z) for z in pts]
    fit = um.family_classifier(None, img, params)
    spec = um.pullback_spec(um.surface_of(fam, params), phi)
    umb = max(um.shape_operator(spec, w).residual for w in img[:5] if w.xnorm > 0.05)
    return fit.residual, umb


def umbilic_suite(ctx: Context):
    prm = ctx.params
    rng = ctx.rng("families")
    per = max(10, ctx.cfg.points // 2)
    draws = _family_draws(prm, rng, 3)
    items = [(name, fam, int(rng.integers(2 ** 32)), per) for name, fam in draws]
    res = ctx.map(partial(_umbilic_family, prm), items)
    by = {k: [r for (n, _), r in zip(draws, res) if n == k] for k in ("A1", "A2", "B")}
    ctx.record("a1_curvature", "umbilic", max(r[1] for r in by["A1"]))
    ctx.record("a1_umbilic", "umbilic", max(r[0] for r in by["A1"]))
    ctx.record("a2_geodesic", "umbilic", max(max(r[0], r[1]) for r in by["A2"]))
    ctx.record("b_geodesic", "umbilic", max(max(r[0], r[1]) for r in by["B"]))
    ctx.record("codazzi", "codazzi", max(r[3] for r in res))
    if prm.supports_cones:
        ctx.record("normal_in_cone", "cones", sum(r[2] for r in res))
    else:
        ctx.skip("normal_in_cone", "cones", "requires p≥3")
    fams = [um.A1(rng.uniform(-1, 1, prm.q), float(rng.uniform(0.5, 2.0))) for _ in range(3)]
    b0 = rng.standard_normal(prm.q)
    fams.append(um.A1(b0, float(np.linalg.norm(b0))))      # through the origin: image is a plane
    items = [(f, int(rng.integers(2 ** 32))) for f in fams]
    ires = ctx.map(partial(_inversion_image, prm), items)
    ctx.record("inversion_image_family", "umbilic", max(r[0] for r in ires))
    ctx.record("inversion_image_umbilic", "umbilic", max(r[1] for r in ires))


# ---------------------------------------------------------------------------
# distance
# ---------------------------------------------------------------------------

def quotient_base_point(params: GrushinParams, norm: float = 2.0) -> CartesianPoint:
    """A point with homogeneous norm ``norm`` and both x and y nonzero."""
    R = norm ** (params.alpha + 1)
    th = np.zeros(params.p)
    th[0] = 1.0
    y = np.zeros(params.q)
    y[0] = 0.8 * R
    return to_cartesian(CylindricalPoint(0.6 * R, y, th), params)


def kernel_points(params, count, rng):
    pts = random_points(params, count - count // 5, rng, box=2.0)
    pts = [p for p in pts if homogeneous_norm(p, params) >= 0.1]
    return pts + axis_points(params, count // 5, rng)


def _kernel_point(params, z):
    return dl.harmonic_kernel_residual(params, CartesianPoint.from_coords(z, params.p))


def distance_suite(ctx: Context):
    prm = ctx.params
    cfg = ctx.cfg
    z = quotient_base_point(prm)
    rng = ctx.rng("maps")
    chains = {
        "inversion": cf.MapChain([cf.Inversion()], prm),
        "dilation": cf.MapChain([cf.Dilation(1.7)], prm),
        "isometry": cf.MapChain([cf.Isometry(cf.random_orthogonal(prm.p, rng), cf.random_orthogonal(prm.q, rng),
                                             rng.uniform(-1, 1, prm.q))], prm),
    }
    tables = {}
    for name, ch in chains.items():
        tables[name] = dl.conformality_quotient(ch, z, QUOTIENT_EPS, seed=cfg.seed % 2 ** 32)
    arts = {}
    if cfg.csv_dir:
        for name, tab in tables.items():
            path = Path(cfg.csv_dir) / f"quotient_{name}.csv"
            tab.to_csv(path)
            arts[name] = [str(Path(path.name))]
    inv = tables["inversion"]
    ctx.record("quotient_inversion_extrapolated", "quotient", inv.worst_extrapolated_error(), [z.coords],
               artifacts=arts.get("inversion", ()))
    ctx.record("quotient_inversion_decay", "quotient", max(inv.decay_factors()), [z.coords],
               artifacts=arts.get("inversion", ()))
    for name in ("dilation", "isometry"):
        w = tables[name].worst_error()
        ctx.record(f"quotient_{name}", "quotient", w[min(w)], [z.coords], artifacts=arts.get(name, ()))

    kp = _coords(kernel_points(prm, 100, ctx.rng("kernel")))
    if prm.alpha != int(prm.alpha):
        # the kernel is only finitely differentiable across x = 0 for non-integer alpha
        kp = kp[np.linalg.norm(kp[:, :prm.p], axis=1) > 0]
    ctx.record("harmonic_kernel", "kernel", max(ctx.map(partial(_kernel_point, prm), kp)), [kp])
    flat = GrushinParams(prm.p, prm.q, 0.0)
    kp0 = _coords(kernel_points(flat, 100, ctx.rng("newton")))
    ctx.record("newtonian_kernel", "kernel", max(ctx.map(partial(_kernel_point, flat), kp0)), [kp0])
    s = 0.8
    x1 = np.zeros(prm.p)
    x1[0] = s
    d = dl.distance_upper_bound(CartesianPoint(np.zeros(prm.p), np.zeros(prm.q)), CartesianPoint(x1, np.zeros(prm.q)), prm)
    ctx.record("distance_x_aligned", "distance", abs(d.d_hat - s))


SUITE_FUNCS = {
    "curvature": curvature_suite,
    "cones": cones_suite,
    "conformal": conformal_suite,
    "umbilic": umbilic_suite,
    "distance": distance_suite,
}


def run_suite(cfg: SuiteConfig, jobs: int | None = None) -> SuiteReport:
    """Run the configured suites; the caller fills in the runtime."""
    report = SuiteReport(cfg.to_dict())
    jobs = cfg.jobs if jobs is None else jobs
    pool = ProcessPoolExecutor(max_workers=jobs) if jobs and jobs > 1 else None
    try:
        for name in cfg.suite_list:
            ctx = Context(cfg, name, pool)
            log.info("running suite %s", name)
            SUITE_FUNCS[name](ctx)
            report.records.extend(ctx.records)
    finally:
        if pool is not None:
            pool.shutdown()
    return report
