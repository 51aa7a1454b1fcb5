"""Exact k-nearest-neighbour search on a uniform voxel grid (numba compiled).

Points are bucketed into cubic cells; each query scans rings of cells around
its home cell until the k-th best distance is no larger than the distance
every unvisited cell is guaranteed to keep.
"""

from __future__ import annotations

import math

import numba
import numpy as np

# cells per point upper bound; keeps the grid arrays O(N)
_MAX_CELLS_PER_POINT = 2.0
_CELL_OCCUPANCY = 0.5


def _grid_shape(xyz: np.ndarray, k: int):
    lo = xyz.min(axis=0)
    span = np.maximum(xyz.max(axis=0) - lo, 1e-9)
    n = len(xyz)
    # aim for about k / 2 points per cell, judged on the bounding volume
    cell = (np.prod(span) * _CELL_OCCUPANCY * max(k, 1) / n) ** (1.0 / 3.0)
    cell = max(cell, 1e-6)
    while True:
        dims = np.floor(span / cell).astype(np.int64) + 1
        if dims.prod() <= _MAX_CELLS_PER_POINT * n + 27:
            return lo, float(cell), dims
        cell *= 1.25


@numba.njit(cache=True)
def _bucket(xyz, lo, cell, dims):
    n = xyz.shape[0]
    ncell = dims[0] * dims[1] * dims[2]
    cidx = np.empty((n, 3), dtype=np.int64)
    key = np.empty(n, dtype=np.int64)
    for i in range(n):
        for a in range(3):
            c = int((xyz[i, a] - lo[a]) / cell)
            if c >= dims[a]:
                c = dims[a] - 1
            cidx[i, a] = c
        key[i] = (cidx[i, 0] * dims[1] + cidx[i, 1]) * dims[2] + cidx[i, 2]
    start = np.zeros(ncell + 1, dtype=np.int64)
    for i in range(n):
        start[key[i] + 1] += 1
    for c in range(ncell):
        start[c + 1] += start[c]
    fill = start[:-1].copy()
    order = np.empty(n, dtype=np.int64)
    for i in range(n):
        order[fill[key[i]]] = i
        fill[key[i]] += 1
    return cidx, start, order


@numba.njit(cache=True)
def _knn(xyz, k, lo, cell, dims, cidx, start, order):
    n = xyz.shape[0]
    # coordinates in cell order so ring scans read contiguous memory
    sx = np.empty((n, 3), dtype=np.float64)
    for t in range(n):
        for a in range(3):
            sx[t, a] = xyz[order[t], a]
    out_d = np.empty((n, k), dtype=np.float64)
    out_i = np.empty((n, k), dtype=np.int64)
    bd = np.empty(k, dtype=np.float64)
    bi = np.empty(k, dtype=np.int64)
    max_ring = max(dims[0], max(dims[1], dims[2]))
    for q in range(n):
        i = order[q]
        px, py, pz = sx[q, 0], sx[q, 1], sx[q, 2]
        cx, cy, cz = cidx[i, 0], cidx[i, 1], cidx[i, 2]
        found = 0
        for s in range(max_ring + 1):
            for gx in range(max(cx - s, 0), min(cx + s, dims[0] - 1) + 1):
                ex = gx == cx - s or gx == cx + s
                for gy in range(max(cy - s, 0), min(cy + s, dims[1] - 1) + 1):
                    ey = ex or gy == cy - s or gy == cy + s
                    for gz in range(max(cz - s, 0), min(cz + s, dims[2] - 1) + 1):
                        # only the shell at Chebyshev distance s
                        if not (ey or gz == cz - s or gz == cz + s):
                            continue
                        c = (gx * dims[1] + gy) * dims[2] + gz
                        for t in range(start[c], start[c + 1]):
                            if t == q:
                                continue
                            dx = px - sx[t, 0]
                            dy = py - sx[t, 1]
                            dz = pz - sx[t, 2]
                            # squared distances while searching; sqrt is monotone
                            d = dx * dx + dy * dy + dz * dz
                            j = order[t]
                            if found < k:
                                pos = found
                                found += 1
                            elif d < bd[k - 1] or (d == bd[k - 1] and j < bi[k - 1]):
                                pos = k - 1
                            else:
                                continue
                            # insertion into the sorted candidate list (distance, then index)
                            while pos > 0 and (bd[pos - 1] > d or (bd[pos - 1] == d and bi[pos - 1] > j)):
                                bd[pos] = bd[pos - 1]
                                bi[pos] = bi[pos - 1]
                                pos -= 1
                            bd[pos] = d
                            bi[pos] = j
            if found == k:
                # distance from the query to the nearest face of the visited block
                reach = np.inf
                for a in range(3):
                    p = sx[q, a] - lo[a]
                    c = cidx[i, a]
                    if c - s > 0:
                        reach = min(reach, p - (c - s) * cell)
                    if c + s < dims[a] - 1:
                        reach = min(reach, (c + s + 1) * cell - p)
                # slack guards against rounding in the cell assignment
                reach -= 1e-9 * cell
                if reach > 0 and bd[k - 1] <= reach * reach:
                    break
        for m in range(k):
            out_d[i, m] = math.sqrt(bd[m])
            out_i[i, m] = bi[m]
    return out_d, out_i


def grid_knn(xyz: np.ndarray, k: int, max_cell_load: int | None = None):
    """Distances and indices of the k nearest other points, ascending; ties by index.

    Returns None when the busiest cell holds more than ``max_cell_load``
    points, i.e. when the cloud is too clustered for a uniform grid.
    """
    xyz = np.ascontiguousarray(xyz, dtype=np.float64)
    lo, cell, dims = _grid_shape(xyz, k)
    cidx, start, order = _bucket(xyz, lo, cell, dims)
    if max_cell_load is not None and np.diff(start).max() > max_cell_load:
        return None
    return _knn(xyz, k, lo, cell, dims, cidx, start, order)
