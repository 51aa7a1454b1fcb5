"""Domain types and box geometry shared by every pipeline stage.

Axis convention: x forward, y left, z up. A box's ``l`` runs along its
heading, ``w`` is the lateral extent and ``h`` the vertical extent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

BACKGROUND = 0
VEHICLE = 1
SPRAY = 2
LABEL_CODES = (BACKGROUND, VEHICLE, SPRAY)


def normalize_angle(theta: float) -> float:
    """Wrap an angle to [-pi, pi). Values already in range are returned untouched."""
    theta = float(theta)
    if -math.pi <= theta < math.pi:
        return theta
    wrapped = (theta + math.pi) % (2.0 * math.pi) - math.pi
    # float rounding can land exactly on +pi
    return -math.pi if wrapped >= math.pi else wrapped


@dataclass(frozen=True, eq=False)
class PointCloud:
    """N x 4 float32 array of (x, y, z, intensity)."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float32)
        if pts.ndim == 1 and pts.size == 0:
            pts = pts.reshape(0, 4)
        if pts.ndim != 2 or pts.shape[1] != 4:
            raise ValueError(f"point cloud must have shape (N, 4), got {pts.shape}")
        if not np.isfinite(pts).all():
            bad = int(np.flatnonzero(~np.isfinite(pts).all(axis=1))[0])
            raise ValueError(f"non-finite value in point {bad}")
        if pts is self.points and pts.flags.writeable:
            pts = pts.copy()
        pts.flags.writeable = False
        object.__setattr__(self, "points", pts)

    @classmethod
    def empty(cls) -> "PointCloud":
        return cls(np.zeros((0, 4), dtype=np.float32))

    @classmethod
    def from_xyz(cls, xyz, intensity=None) -> "PointCloud":
        xyz = np.asarray(xyz, dtype=np.float32).reshape(-1, 3)
        pts = np.zeros((len(xyz), 4), dtype=np.float32)
        pts[:, :3] = xyz
        if intensity is not None:
            pts[:, 3] = intensity
        return cls(pts)

    def __eq__(self, other):
        if not isinstance(other, PointCloud):
            return NotImplemented
        return self.points.shape == other.points.shape and self.points.tobytes() == other.points.tobytes()

    __hash__ = None

    @property
    def xyz(self) -> np.ndarray:
        return self.points[:, :3]

    def __len__(self) -> int:
        return self.points.shape[0]

    def select(self, mask) -> "PointCloud":
        mask = np.asarray(mask)
        if mask.dtype == bool:
            # much faster than 2-D boolean fancy indexing
            return PointCloud(np.compress(mask, self.points, axis=0))
        return PointCloud(self.points[mask])


@dataclass(frozen=True)
class Box3D:
    x: float
    y: float
    z: float
    w: float
    l: float
    h: float
    theta: float = 0.0

    def __post_init__(self):
        for name in ("x", "y", "z", "w", "l", "h", "theta"):
            v = float(getattr(self, name))
            if not math.isfinite(v):
                raise ValueError(f"box field {name} is not finite: {v}")
            object.__setattr__(self, name, v)
        if not (self.w > 0 and self.l > 0 and self.h > 0):
            raise ValueError(f"box extents must be positive, got w={self.w} l={self.l} h={self.h}")
        object.__setattr__(self, "theta", normalize_angle(self.theta))

    @property
    def center(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])

    @property
    def volume(self) -> float:
        return self.w * self.l * self.h

    def as_list(self) -> list[float]:
        return [self.x, self.y, self.z, self.w, self.l, self.h, self.theta]

    def bev_corners(self) -> np.ndarray:
        """Footprint corners, counter-clockwise, shape (4, 2)."""
        c, s = math.cos(self.theta), math.sin(self.theta)
        hl, hw = self.l / 2.0, self.w / 2.0
        local = np.array([[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]])
        rot = np.array([[c, -s], [s, c]])
        return local @ rot.T + np.array([self.x, self.y])


@dataclass(frozen=True)
class Detection:
    box: Box3D
    confidence: float
    class_id: str = "vehicle"

    def __post_init__(self):
        conf = float(self.confidence)
        if not (0.0 <= conf <= 1.0):
            raise ValueError(f"confidence must lie in [0, 1], got {conf}")
        object.__setattr__(self, "confidence", conf)


@dataclass(frozen=True, eq=False)
class RadarTargetList:
    """M x 4 array of (x, y, z, v); v is radial velocity in m/s."""

    targets: np.ndarray = field(default_factory=lambda: np.zeros((0, 4)))

    def __post_init__(self):
        t = np.array(self.targets, dtype=np.float64)
        if t.size == 0:
            t = t.reshape(0, 4)
        if t.ndim != 2 or t.shape[1] != 4:
            raise ValueError(f"radar targets must have shape (M, 4), got {t.shape}")
        if not np.isfinite(t).all():
            raise ValueError("radar targets must be finite")
        t.flags.writeable = False
        object.__setattr__(self, "targets", t)

    def __eq__(self, other):
        if not isinstance(other, RadarTargetList):
            return NotImplemented
        return self.targets.shape == other.targets.shape and self.targets.tobytes() == other.targets.tobytes()

    __hash__ = None

    @property
    def positions(self) -> np.ndarray:
        return self.targets[:, :3]

    def __len__(self) -> int:
        return self.targets.shape[0]


def check_scores(scores, n: int) -> np.ndarray:
    scores = np.asarray(scores)
    if scores.ndim != 1 or len(scores) != n:
        raise ValueError(f"score array length {scores.shape} does not match cloud size {n}")
    if not np.isfinite(scores).all():
        bad = int(np.flatnonzero(~np.isfinite(scores))[0])
        raise ValueError(f"non-finite score at index {bad}")
    return scores


def check_labels(labels, n: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.ndim != 1 or len(labels) != n:
        raise ValueError(f"label array length {labels.shape} does not match cloud size {n}")
    if not np.isin(labels, LABEL_CODES).all():
        raise ValueError("labels must be background (0), vehicle (1) or spray (2)")
    return labels.astype(np.uint8, copy=False)


def pad_box(box: Box3D, gamma: float) -> Box3D:
    """Grow every dimension of ``box`` by ``gamma`` (gamma / 2 per side)."""
    if gamma < 0:
        raise ValueError(f"padding must be non-negative, got {gamma}")
    if gamma == 0:
        return box
    return Box3D(box.x, box.y, box.z, box.w + gamma, box.l + gamma, box.h + gamma, box.theta)


def points_in_box(box: Box3D, pts) -> np.ndarray:
    """Vectorized containment test; boundaries count as inside."""
    pts = np.asarray(pts, dtype=np.float64).reshape(-1, 3)
    dx = pts[:, 0] - box.x
    dy = pts[:, 1] - box.y
    c, s = math.cos(box.theta), math.sin(box.theta)
    # rotate by -theta into the box frame
    lx = c * dx + s * dy
    ly = -s * dx + c * dy
    lz = pts[:, 2] - box.z
    return (np.abs(lx) <= box.l / 2.0) & (np.abs(ly) <= box.w / 2.0) & (np.abs(lz) <= box.h / 2.0)


def box_contains_point(box: Box3D, p) -> bool:
    return bool(points_in_box(box, p)[0])


def _clip_polygon(subject: list, clip: np.ndarray) -> list:
    """Sutherland-Hodgman clipping of ``subject`` by the convex CCW polygon ``clip``."""
    out = subject
    n = len(clip)
    for i in range(n):
        if not out:
            break
        ax, ay = clip[i]
        bx, by = clip[(i + 1) % n]
        ex, ey = bx - ax, by - ay
        inp, out = out, []
        prev = inp[-1]
        prev_side = ex * (prev[1] - ay) - ey * (prev[0] - ax)
        for cur in inp:
            cur_side = ex * (cur[1] - ay) - ey * (cur[0] - ax)
            if cur_side >= 0:
                if prev_side < 0:
                    t = prev_side / (prev_side - cur_side)
                    out.append((prev[0] + t * (cur[0] - prev[0]), prev[1] + t * (cur[1] - prev[1])))
                out.append(cur)
            elif prev_side >= 0:
                t = prev_side / (prev_side - cur_side)
                out.append((prev[0] + t * (cur[0] - prev[0]), prev[1] + t * (cur[1] - prev[1])))
            prev, prev_side = cur, cur_side
    return out


def _polygon_area(poly: list) -> float:
    if len(poly) < 3:
        return 0.0
    area = 0.0
    for i in range(len(poly)):
        x0, y0 = poly[i]
        x1, y1 = poly[(i + 1) % len(poly)]
        area += x0 * y1 - x1 * y0
    return abs(area) / 2.0


def bev_intersection_area(a: Box3D, b: Box3D) -> float:
    ca, cb = a.bev_corners(), b.bev_corners()
    # cheap reject on circumscribed circles
    ra = math.hypot(a.l, a.w) / 2.0
    rb = math.hypot(b.l, b.w) / 2.0
    if math.hypot(a.x - b.x, a.y - b.y) > ra + rb:
        return 0.0
    poly = _clip_polygon([tuple(p) for p in ca], cb)
    return _polygon_area(poly)


def box_iou_3d(a: Box3D, b: Box3D) -> float:
    """Oriented 3D IoU: rotated-footprint overlap area times vertical overlap."""
    dz = min(a.z + a.h / 2.0, b.z + b.h / 2.0) - max(a.z - a.h / 2.0, b.z - b.h / 2.0)
    if dz <= 0:
        return 0.0
    inter = bev_intersection_area(a, b) * dz
    if inter <= 0:
        return 0.0
    iou = inter / (a.volume + b.volume - inter)
    return min(1.0, max(0.0, iou))


def bev_range(p) -> float:
    """Horizontal distance from the sensor origin; accepts a point or a box."""
    if isinstance(p, Box3D):
        return math.hypot(p.x, p.y)
    return math.hypot(float(p[0]), float(p[1]))
