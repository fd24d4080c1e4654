"""Pointwise multilinear algebra on dense component arrays.

Index convention: ``R[a, b, c, d] = R(e_a, e_b, e_c, e_d) = g(e_a, R(e_c, e_d) e_b)``
with ``R(X, Y) = [nabla_X, nabla_Y] - nabla_[X, Y]``.  With this convention
``Ric(X, Y) = trace(V -> R(V, Y) X)`` is ``Ric[b, d] = g^{ac} R[a, b, c, d]`` and a
round unit sphere has ``R(X, Y, X, Y) = +1`` for orthonormal X, Y.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInput, DimensionMismatch, DimensionTooSmall, SingularMetric

COND_LIMIT = 1e12


def kulkarni_nomizu(h: np.ndarray, s: np.ndarray) -> np.ndarray:
    """(h o s)_abcd = h_ad s_bc + h_bc s_ad - h_ac s_bd - h_bd s_ac."""
    h = np.asarray(h, dtype=float)
    s = np.asarray(s, dtype=float)
    if h.shape != s.shape or h.ndim != 2 or h.shape[0] != h.shape[1]:
        raise DimensionMismatch(f"incompatible shapes {h.shape} and {s.shape}")
    return (np.einsum("ad,bc->abcd", h, s) + np.einsum("bc,ad->abcd", h, s)
            - np.einsum("ac,bd->abcd", h, s) - np.einsum("bd,ac->abcd", h, s))


def inverse_metric(g: np.ndarray) -> np.ndarray:
    g = np.asarray(g, dtype=float)
    cond = np.linalg.cond(g)
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise SingularMetric(f"metric is not invertible (condition number {cond:.3g})")
    return np.linalg.inv(g)


def ricci_from_riemann(R: np.ndarray, g: np.ndarray) -> np.ndarray:
    ginv = inverse_metric(g)
    if R.shape != (g.shape[0],) * 4:
        raise DimensionMismatch(f"Riemann shape {R.shape} does not match metric {g.shape}")
    ric = np.einsum("ac,abcd->bd", ginv, R)
    return 0.5 * (ric + ric.T)


def scalar_from_ricci(ric: np.ndarray, g: np.ndarray) -> float:
    return float(np.einsum("ab,ab->", inverse_metric(g), ric))


def weyl_from_parts(R: np.ndarray, ric: np.ndarray, scal: float, g: np.ndarray) -> np.ndarray:
    n = g.shape[0]
    if n < 4:
        raise DimensionTooSmall(f"the Weyl tensor is only meaningful for n >= 4 (got n = {n})")
    return (R + kulkarni_nomizu(ric, g) / (n - 2)
            - scal / (2 * (n - 1) * (n - 2)) * kulkarni_nomizu(g, g))


def weyl_tensor(R: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Weyl tensor assembled from a Riemann tensor and the metric it belongs to."""
    ric = ricci_from_riemann(R, g)
    return weyl_from_parts(R, ric, scalar_from_ricci(ric, g), g)


def max_trace(W: np.ndarray, g: np.ndarray) -> float:
    """Largest single trace of a 4-tensor against g (all six index pairs)."""
    ginv = inverse_metric(g)
    specs = ["ab,abcd->cd", "ac,abcd->bd", "ad,abcd->bc", "bc,abcd->ad", "bd,abcd->ac", "cd,abcd->ab"]
    return max(float(np.max(np.abs(np.einsum(s, ginv, W)))) for s in specs)


def gram_schmidt(g: np.ndarray, vectors, tol: float = 1e-10) -> np.ndarray:
    """g-orthonormalise the rows of ``vectors`` (modified Gram-Schmidt, input order kept)."""
    g = np.asarray(g, dtype=float)
    vecs = np.array(vectors, dtype=float, ndmin=2)
    out = []
    for v in vecs:
        scale = np.sqrt(abs(v @ g @ v))
        w = v.copy()
        for e in out:
            w = w - (e @ g @ w) * e
        nrm = np.sqrt(max(w @ g @ w, 0.0))
        if scale == 0 or nrm <= tol * scale:
            raise DegenerateInput("input vectors are linearly dependent")
        out.append(w / nrm)
    return np.array(out)


def orthonormal_frame(g: np.ndarray) -> np.ndarray:
    """Rows form a g-orthonormal basis (Gram-Schmidt on the coordinate basis)."""
    return gram_schmidt(g, np.eye(g.shape[0]))


def to_frame(T: np.ndarray, frame: np.ndarray) -> np.ndarray:
    """Components of a covariant 4-tensor in the basis given by the rows of ``frame``."""
    return np.einsum("abcd,ia,jb,kc,ld->ijkl", T, frame, frame, frame, frame, optimize=True)


@dataclass
class SymmetryReport:
    residuals: dict
    scale: float
    tol: float

    @property
    def passed(self) -> bool:
        return all(v <= self.tol for v in self.residuals.values())

    def __str__(self):
        body = ", ".join(f"{k}={v:.2e}" for k, v in self.residuals.items())
        return f"{'PASS' if self.passed else 'FAIL'} ({body})"


def validate_symmetries(R: np.ndarray, tol: float = 1e-10) -> SymmetryReport:
    """Residuals of the curvature symmetries and first Bianchi identity, relative to max|R|."""
    R = np.asarray(R, dtype=float)
    scale = float(np.max(np.abs(R))) if R.size else 0.0
    norm = scale if scale > 0 else 1.0
    res = {
        "antisym_12": np.max(np.abs(R + R.transpose(1, 0, 2, 3))) / norm,
        "antisym_34": np.max(np.abs(R + R.transpose(0, 1, 3, 2))) / norm,
        "pair_sym": np.max(np.abs(R - R.transpose(2, 3, 0, 1))) / norm,
        "bianchi": np.max(np.abs(R + R.transpose(0, 2, 3, 1) + R.transpose(0, 3, 1, 2))) / norm,
    }
    return SymmetryReport({k: float(v) for k, v in res.items()}, scale, tol)
