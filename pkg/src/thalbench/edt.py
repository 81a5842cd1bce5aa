"""Exact squared Euclidean distance transform.

Separable lower-envelope-of-parabolas algorithm (Felzenszwalb & Huttenlocher,
2012), one pass per axis. With unit spacing every intermediate value is an
integer held exactly in float64, so the result is bit-exact.
"""
from __future__ import annotations

import numpy as np
from numba import njit

INF = np.inf


@njit(cache=True, nogil=True)
def _envelope_rows(rows, w2):
    n_rows, n = rows.shape
    out = np.empty_like(rows)
    v = np.empty(n, dtype=np.int64)
    z = np.empty(n + 1, dtype=np.float64)
    for r in range(n_rows):
        f = rows[r]
        k = -1
        for q in range(n):
            fq = f[q]
            if fq == INF:
                continue
            if k < 0:
                k = 0
                v[0] = q
                z[0] = -INF
                z[1] = INF
                continue
            while True:
                p = v[k]
                s = ((fq + w2 * q * q) - (f[p] + w2 * p * p)) / (2.0 * w2 * (q - p))
                if s <= z[k]:
                    k -= 1
                else:
                    break
            k += 1
            v[k] = q
            z[k] = s
            z[k + 1] = INF
        if k < 0:
            for q in range(n):
                out[r, q] = INF
            continue
        k = 0
        for q in range(n):
            while z[k + 1] < q:
                k += 1
            d = q - v[k]
            out[r, q] = w2 * d * d + f[v[k]]
    return out


def _transform_axis(grid: np.ndarray, axis: int, w2: float) -> np.ndarray:
    moved = np.moveaxis(grid, axis, -1)
    shape = moved.shape
    rows = np.ascontiguousarray(moved).reshape(-1, shape[-1])
    out = _envelope_rows(rows, float(w2)).reshape(shape)
    return np.moveaxis(out, -1, axis)


def squared_edt(sites: np.ndarray, spacing=None) -> np.ndarray:
    """Squared distance from every voxel to the nearest ``True`` voxel.

    ``spacing=None`` measures in voxel index units. Voxels are ``inf`` when
    there are no sites at all.
    """
    sites = np.asarray(sites, dtype=bool)
    if spacing is None:
        spacing = (1.0,) * sites.ndim
    grid = np.where(sites, 0.0, INF)
    for axis, step in enumerate(spacing):
        grid = _transform_axis(grid, axis, float(step) ** 2)
    return grid
