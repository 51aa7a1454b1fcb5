"""Geometric vehicle detector: Euclidean clustering plus oriented box fitting.

Stands in for a trained network. Spray clusters that survive filtering turn
into ghost detections exactly the way they would for a learned detector.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .geometry import Box3D, Detection, PointCloud
from .io import FrameBundle
from .spatial import SpatialIndex

# extents collapse to zero for coplanar clusters
_MIN_EXTENT = 1e-3


@dataclass(frozen=True)
class ClusterParams:
    link_radius: float = 0.7
    min_points: int = 10
    ground_z: float = 0.15
    max_box: tuple = (3.0, 7.0, 3.0)  # w, l, h caps

    def __post_init__(self):
        object.__setattr__(self, "max_box", tuple(float(v) for v in self.max_box))
        if self.link_radius <= 0 or self.ground_z <= 0 or len(self.max_box) != 3 or min(self.max_box) <= 0:
            raise ValueError(f"invalid cluster parameters {self}")
        if self.min_points < 3:
            raise ValueError("min_points must be at least 3")


def cluster_labels(xyz: np.ndarray, link_radius: float) -> np.ndarray:
    """Connected-component id per point under the relation dist <= link_radius."""
    n = len(xyz)
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    pairs = SpatialIndex(xyz).pairs(link_radius)
    graph = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n))
    _, labels = connected_components(graph, directed=False)
    return labels


def fit_box(xyz: np.ndarray) -> Box3D:
    """Oriented box from the principal BEV axis; extents are the bounds in that frame."""
    xy = xyz[:, :2]
    cov = np.cov(xy.T) if len(xy) > 1 else np.zeros((2, 2))
    evals, evecs = np.linalg.eigh(cov)
    major = evecs[:, int(np.argmax(evals))]
    theta = math.atan2(major[1], major[0])
    # heading is ambiguous mod pi; keep it in [-pi/2, pi/2)
    if theta >= math.pi / 2:
        theta -= math.pi
    elif theta < -math.pi / 2:
        theta += math.pi
    c, s = math.cos(theta), math.sin(theta)
    u = xy[:, 0] * c + xy[:, 1] * s
    v = -xy[:, 0] * s + xy[:, 1] * c
    u0, u1, v0, v1 = u.min(), u.max(), v.min(), v.max()
    z0, z1 = xyz[:, 2].min(), xyz[:, 2].max()
    um, vm = (u0 + u1) / 2.0, (v0 + v1) / 2.0
    return Box3D(
        um * c - vm * s,
        um * s + vm * c,
        (z0 + z1) / 2.0,
        max(v1 - v0, _MIN_EXTENT),
        max(u1 - u0, _MIN_EXTENT),
        max(z1 - z0, _MIN_EXTENT),
        theta,
    )


def cluster_detect(cloud: PointCloud, params: ClusterParams = ClusterParams()) -> list[Detection]:
    xyz = cloud.xyz.astype(np.float64)
    xyz = xyz[xyz[:, 2] > params.ground_z]
    if len(xyz) < params.min_points:
        return []
    labels = cluster_labels(xyz, params.link_radius)
    sizes = np.bincount(labels)
    max_w, max_l, max_h = params.max_box
    dets = []
    for cid in np.flatnonzero(sizes >= params.min_points):
        box = fit_box(xyz[labels == cid])
        if box.w > max_w or box.l > max_l or box.h > max_h:
            continue
        dets.append(Detection(box, min(1.0, sizes[cid] / 100.0)))
    dets.sort(key=lambda d: (-d.confidence, d.box.x))
    return dets


def attach_external_detections(bundle: FrameBundle, dets, frame_id: str | None = None) -> FrameBundle:
    """Attach detections produced elsewhere; ``frame_id`` must match the bundle if given."""
    if frame_id is not None and str(frame_id) != bundle.frame_id:
        raise ValueError(f"detections for frame {frame_id!r} cannot attach to frame {bundle.frame_id!r}")
    return bundle.with_detections(dets)
