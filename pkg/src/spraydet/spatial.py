"""Neighborhood queries over a point cloud.

kNN runs on a compiled uniform grid, falling back to a k-d tree for heavily
clustered clouds; radius queries use the k-d tree.
"""

from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree

from ._gridknn import grid_knn
from .geometry import PointCloud


class SpatialIndex:
    """Read-only k-nearest-neighbour and fixed-radius index over xyz coordinates."""

    def __init__(self, cloud):
        xyz = cloud.xyz if isinstance(cloud, PointCloud) else np.asarray(cloud)
        self.xyz = np.ascontiguousarray(xyz, dtype=np.float64).reshape(-1, 3)
        self.xyz.flags.writeable = False
        self._kdtree = None

    @property
    def _tree(self) -> cKDTree:
        if self._kdtree is None:
            self._kdtree = cKDTree(self.xyz)
        return self._kdtree

    def __len__(self) -> int:
        return self.xyz.shape[0]

    def knn(self, k: int) -> tuple[np.ndarray, np.ndarray]:
        """Distances and indices of each point's k nearest neighbours, self excluded.

        Rows are sorted by ascending distance. Requires k < N.
        """
        n = len(self)
        if k < 1:
            raise ValueError(f"k must be >= 1, got {k}")
        if k >= n:
            raise ValueError(f"k={k} needs more than {k} points, cloud has {n}")
        found = grid_knn(self.xyz, k, max_cell_load=64 + 16 * k)
        if found is not None:
            return found
        dist, idx = self._tree.query(self.xyz, k=k + 1)
        is_self = idx == np.arange(n)[:, None]
        # duplicates may push self out of column 0; drop self where found, else the farthest
        drop = np.where(is_self.any(axis=1), is_self.argmax(axis=1), k)
        keep = np.ones_like(is_self)
        keep[np.arange(n), drop] = False
        return dist[keep].reshape(n, k), idx[keep].reshape(n, k)

    def neighbors(self, i: int, radius: float) -> np.ndarray:
        """Sorted indices of the other points within ``radius`` of point ``i``."""
        found = self._tree.query_ball_point(self.xyz[i], radius)
        return np.array(sorted(j for j in found if j != i), dtype=np.int64)

    def radius_counts(self, radii) -> np.ndarray:
        """Per-point count of other points within ``radii`` (scalar or per-point array)."""
        radii = np.broadcast_to(np.asarray(radii, dtype=np.float64), (len(self),))
        if len(self) == 0:
            return np.zeros(0, dtype=np.int64)
        counts = self._tree.query_ball_point(self.xyz, radii, return_length=True)
        return np.asarray(counts, dtype=np.int64) - 1

    def pairs(self, radius: float) -> np.ndarray:
        """All index pairs (i < j) with distance <= radius, shape (P, 2)."""
        return self._tree.query_pairs(radius, output_type="ndarray")


def knn_mean_distance(index: SpatialIndex, k: int) -> np.ndarray:
    dist, _ = index.knn(k)
    return dist.mean(axis=1)


def radius_count(index: SpatialIndex, point_idx: int, radius: float) -> int:
    if radius <= 0:
        raise ValueError(f"radius must be positive, got {radius}")
    return len(index.neighbors(point_idx, radius))
