"""Central finite-difference stencils.

Callables passed here are vectorised over a leading batch axis: ``f(Z)`` with
``Z`` of shape ``(m, n)`` returns an array of shape ``(m, *S)``.  Every stencil
point is evaluated in a single batched call.
"""
from __future__ import annotations

import numpy as np

_SECOND_DIAG = {
    2: (np.array([1.0, -2.0, 1.0]), 1),
    4: (np.array([-1 / 12, 4 / 3, -5 / 2, 4 / 3, -1 / 12]), 2),
    6: (np.array([1 / 90, -3 / 20, 3 / 2, -49 / 18, 3 / 2, -3 / 20, 1 / 90]), 3),
}


def _central2(f, z, h, second):
    n = z.size
    eye = np.eye(n)
    pts = [z[None, :], z + h * eye, z - h * eye]
    pairs = []
    if second:
        pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
        if pairs:
            ii = np.array([i for i, _ in pairs])
            jj = np.array([j for _, j in pairs])
            ei, ej = eye[ii], eye[jj]
            pts += [z + h * (ei + ej), z + h * (ei - ej), z - h * (ei - ej), z - h * (ei + ej)]
    vals = f(np.concatenate(pts, axis=0))
    f0 = vals[0]
    fp = vals[1:1 + n]
    fm = vals[1 + n:1 + 2 * n]
    grad = (fp - fm) / (2 * h)
    if not second:
        return f0, grad, None
    hess = np.empty((n, n) + f0.shape)
    diag = (fp - 2 * f0 + fm) / h ** 2
    for i in range(n):
        hess[i, i] = diag[i]
    if pairs:
        m = len(pairs)
        off = 1 + 2 * n
        fpp, fpm, fmp, fmm = (vals[off + k * m: off + (k + 1) * m] for k in range(4))
        mixed = (fpp - fpm - fmp + fmm) / (4 * h ** 2)
        for k, (i, j) in enumerate(pairs):
            hess[i, j] = hess[j, i] = mixed[k]
    return f0, grad, hess


def derivatives(f, z, h: float, order: int = 2, second: bool = True):
    """Value, gradient and Hessian of ``f`` at ``z`` by central differences.

    ``order=2`` is the plain central stencil; ``order=4`` applies one Richardson
    step to the central stencils at ``h`` and ``2h``.  The Hessian is exactly
    symmetric in its two derivative indices.
    """
    z = np.asarray(z, dtype=float)
    f0, g1, h1 = _central2(f, z, h, second)
    if order == 2:
        return f0, g1, h1
    if order != 4:
        raise ValueError("order must be 2 or 4")
    _, g2, h2 = _central2(f, z, 2 * h, second)
    grad = (4 * g1 - g2) / 3
    hess = None if not second else (4 * h1 - h2) / 3
    return f0, grad, hess


def second_diagonal(f, z, h: float, order: int = 6, axes=None) -> np.ndarray:
    """Pure second derivatives d^2 f / dz_i^2 for i in ``axes`` (default: all)."""
    z = np.asarray(z, dtype=float)
    coeffs, half = _SECOND_DIAG[order]
    axes = range(z.size) if axes is None else axes
    axes = list(axes)
    offsets = np.arange(-half, half + 1) * h
    pts = []
    for i in axes:
        block = np.repeat(z[None, :], offsets.size, axis=0)
        block[:, i] += offsets
        pts.append(block)
    vals = np.asarray(f(np.concatenate(pts, axis=0)))
    vals = vals.reshape((len(axes), offsets.size) + vals.shape[1:])
    return np.einsum("k,ak...->a...", coeffs, vals) / h ** 2
