"""Dense, chunked soft-min reductions over a finite set of atoms.

Every entropic quantity in the package is a reduction of the Gibbs weights

    w_i(a) proportional to exp((offset_i - |a - b_i|^2 / 2) / eps)

over atoms ``b_i`` for a query point ``a``: the smooth c-transform is the
log-normaliser, the entropic quantile map and the backward map are weighted
averages. Costs are accumulated coordinate by coordinate so that the result
for one query row never depends on what else is in the batch.
"""

from __future__ import annotations

import numpy as np

_CHUNK_ELEMENTS = 2_000_000


def half_sq_dist(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``0.5 * |a_j - b_i|^2`` as an ``(len(a), len(b))`` array."""
    out = np.subtract.outer(a[:, 0], b[:, 0])
    out *= out
    for k in range(1, a.shape[1]):
        t = np.subtract.outer(a[:, k], b[:, k])
        t *= t
        out += t
    out *= 0.5
    return out


def _row_chunks(m: int, n: int):
    step = max(1, _CHUNK_ELEMENTS // max(n, 1))
    for start in range(0, m, step):
        yield slice(start, min(m, start + step))


def softmin(queries, atoms, offsets, eps, values=None):
    """Log-normaliser and (optionally) Gibbs-weighted averages.

    Parameters
    ----------
    queries : ndarray, shape (m, d)
    atoms : ndarray, shape (n, d)
    offsets : ndarray, shape (n,)
    eps : float
    values : ndarray, shape (n, k), optional
        Quantities to average under the Gibbs weights.

    Returns
    -------
    lse : ndarray, shape (m,)
        ``log sum_i exp((offset_i - |a - b_i|^2/2) / eps)``.
    avg : ndarray, shape (m, k) or None
    """
    m = len(queries)
    n = len(atoms)
    lse = np.empty(m)
    avg = None if values is None else np.empty((m, values.shape[1]))
    scaled = offsets / eps
    for rows in _row_chunks(m, n):
        z = half_sq_dist(queries[rows], atoms)
        z /= -eps
        z += scaled
        zmax = z.max(axis=1)
        z -= zmax[:, None]
        np.exp(z, out=z)
        s = z.sum(axis=1)
        lse[rows] = np.log(s) + zmax
        if values is not None:
            avg[rows] = (z @ values) / s[:, None]
    return lse, avg


def softmin_weights(queries, atoms, offsets, eps):
    """Full normalised Gibbs weight matrix, shape ``(m, n)``; small problems only."""
    z = half_sq_dist(queries, atoms)
    z /= -eps
    z += offsets / eps
    z -= z.max(axis=1, keepdims=True)
    np.exp(z, out=z)
    z /= z.sum(axis=1, keepdims=True)
    return z
