"""Deterministic synthetic highway spray scenes.

Each scene holds a ground plane, one lead vehicle (the only ground-truth box),
two spray corridors (behind the lead vehicle and behind the ego sensor), radar
targets on the lead vehicle's rear and synthetic per-point anomaly scores.

Randomness comes exclusively from ``numpy.random.Generator(PCG64(seed))`` with
a fixed call order, so a (config, seed) pair fully determines the scene.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from .geometry import BACKGROUND, SPRAY, VEHICLE, Box3D, PointCloud, RadarTargetList, points_in_box
from .io import DatasetManifest, FrameBundle, write_frame, write_manifest

SPEED_CLASSES = (50, 70, 90, 110, 130)  # km/h
VEHICLE_DIMS = (1.9, 4.5, 1.6)  # w, l, h
VEHICLE_REF_RANGE = 15.0  # full vehicle point count up to this range
LIDAR_NOISE = 0.01
GROUND_X = (-10.0, 70.0)
GROUND_Y = (-8.0, 8.0)

# spray blob geometry, one blob per wheel track; offsets in the emitter's frame
SPRAY_SIGMA = (1.0, 0.35, 0.3)  # along, lateral, vertical
SPRAY_TRACK_Y = 0.75
SPRAY_Z = 0.6
LEAD_SPRAY_GAP = 4.0  # blob center behind the lead's rear face
EGO_SPRAY_X = -4.0


@dataclass(frozen=True)
class SceneConfig:
    lead_distance: float = 20.0
    lead_distance_jitter: float = 0.0
    lead_speed_kmh: int | None = 90  # None draws a speed class per scene
    spray_points: int = 300  # per corridor at 100 km/h
    vehicle_surface_points: int = 300
    ground_points: int = 2000
    ground_noise_sigma: float = 0.03
    radar_targets_on_vehicle: int = 2
    clutter_target_prob: float = 0.05
    score_separation: float = 4.0
    vehicle_score_mean: float = 0.0
    seed: int = 0

    def __post_init__(self):
        counts = (self.spray_points, self.vehicle_surface_points, self.ground_points, self.radar_targets_on_vehicle)
        if min(counts) < 0:
            raise ValueError("point and target counts must be non-negative")
        if not 0.0 <= self.clutter_target_prob <= 1.0:
            raise ValueError("clutter_target_prob must lie in [0, 1]")
        if self.lead_speed_kmh is not None and self.lead_speed_kmh not in SPEED_CLASSES:
            raise ValueError(f"lead_speed_kmh must be one of {SPEED_CLASSES}")
        if self.lead_distance - self.lead_distance_jitter < 5.0:
            raise ValueError("lead vehicle must stay at least 5 m ahead")
        if self.ground_noise_sigma < 0 or self.lead_distance_jitter < 0:
            raise ValueError("sigma and jitter must be non-negative")


def spray_count(cfg: SceneConfig, speed_kmh: int) -> int:
    """Spray points per corridor; grows linearly with speed."""
    return int(round(cfg.spray_points * speed_kmh / 100.0))


def _to_world(local: np.ndarray, x: float, y: float, z: float, yaw: float) -> np.ndarray:
    c, s = math.cos(yaw), math.sin(yaw)
    out = np.empty_like(local)
    out[:, 0] = x + c * local[:, 0] - s * local[:, 1]
    out[:, 1] = y + s * local[:, 0] + c * local[:, 1]
    out[:, 2] = z + local[:, 2]
    return out


def sample_box_surface(rng: np.random.Generator, box: Box3D, n: int, bottom: bool = False) -> np.ndarray:
    """Stratified samples on the box faces (bottom face optional).

    Points are shared between faces by area and laid on a jittered grid per
    face, mimicking the regular sampling of a scanning sensor.
    """
    if n == 0:
        return np.zeros((0, 3))
    l, w, h = box.l, box.w, box.h
    # (fixed axis, fixed value, free axes, free extents)
    faces = [
        (0, l / 2, (1, 2), (w, h)),
        (0, -l / 2, (1, 2), (w, h)),
        (1, w / 2, (0, 2), (l, h)),
        (1, -w / 2, (0, 2), (l, h)),
        (2, h / 2, (0, 1), (l, w)),
    ]
    if bottom:
        faces.append((2, -h / 2, (0, 1), (l, w)))
    areas = np.array([a * b for *_, (a, b) in faces])
    share = n * areas / areas.sum()
    counts = np.floor(share).astype(int)
    # largest remainder, ties to the earlier face
    for i in np.argsort(-(share - counts), kind="stable")[: n - counts.sum()]:
        counts[i] += 1
    parts = []
    for (axis, value, (fa, fb), (a, b)), m in zip(faces, counts):
        if m == 0:
            continue
        na = max(1, int(round(math.sqrt(m * a / b))))
        nb = math.ceil(m / na)
        cells = np.arange(na * nb)[:m]
        ia, ib = cells % na, cells // na
        local = np.zeros((m, 3))
        local[:, axis] = value
        local[:, fa] = ((ia + rng.random(m)) / na - 0.5) * a
        local[:, fb] = ((ib + rng.random(m)) / nb - 0.5) * b
        parts.append(local)
    return _to_world(np.vstack(parts), box.x, box.y, box.z, box.theta)


def _spray_corridor(rng, n: int, x: float, y: float, yaw: float, exclude: Box3D) -> np.ndarray:
    """Two elongated Gaussian blobs along the wheel tracks, kept outside ``exclude``."""
    out = np.zeros((0, 3))
    while len(out) < n:
        m = n - len(out)
        local = rng.normal(0.0, 1.0, (m, 3)) * np.array(SPRAY_SIGMA)
        local[:, 1] += np.where(rng.random(m) < 0.5, -SPRAY_TRACK_Y, SPRAY_TRACK_Y)
        pts = _to_world(local, x, y, SPRAY_Z, yaw)
        out = np.vstack([out, pts[~points_in_box(exclude, pts)]])
    return out[:n]


def _ground(rng, n: int, sigma: float, exclude: Box3D) -> np.ndarray:
    out = np.zeros((0, 3))
    while len(out) < n:
        m = n - len(out) + 16
        pts = np.column_stack([
            rng.uniform(*GROUND_X, m),
            rng.uniform(*GROUND_Y, m),
            rng.normal(0.0, sigma, m) if sigma > 0 else np.zeros(m),
        ])
        flat = pts.copy()
        flat[:, 2] = exclude.z
        out = np.vstack([out, pts[~points_in_box(exclude, flat)]])
    return out[:n]


def generate_scene(cfg: SceneConfig, frame_id: str | None = None) -> FrameBundle:
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    speed = cfg.lead_speed_kmh if cfg.lead_speed_kmh is not None else int(rng.choice(SPEED_CLASSES))
    dist = cfg.lead_distance + rng.uniform(-cfg.lead_distance_jitter, cfg.lead_distance_jitter)
    lateral = rng.uniform(-0.5, 0.5)
    yaw = rng.uniform(-0.05, 0.05)
    w, l, h = VEHICLE_DIMS
    gt = Box3D(dist, lateral, h / 2.0, w, l, h, yaw)

    ground = _ground(rng, cfg.ground_points, cfg.ground_noise_sigma, gt)

    n_vehicle = int(round(cfg.vehicle_surface_points * min(1.0, VEHICLE_REF_RANGE / dist)))
    vehicle = sample_box_surface(rng, gt, n_vehicle)
    vehicle += rng.normal(0.0, LIDAR_NOISE, vehicle.shape)

    n_spray = spray_count(cfg, speed)
    c, s = math.cos(yaw), math.sin(yaw)
    back = l / 2.0 + LEAD_SPRAY_GAP
    lead_spray = _spray_corridor(rng, n_spray, gt.x - c * back, gt.y - s * back, yaw, gt)
    ego_spray = _spray_corridor(rng, n_spray, EGO_SPRAY_X, 0.0, 0.0, gt)
    spray = np.vstack([lead_spray, ego_spray])

    xyz = np.vstack([ground, vehicle, spray])
    labels = np.concatenate([
        np.full(len(ground), BACKGROUND),
        np.full(len(vehicle), VEHICLE),
        np.full(len(spray), SPRAY),
    ]).astype(np.uint8)
    intensity = rng.uniform(0.0, 1.0, len(xyz))
    intensity[labels == SPRAY] *= 0.1
    cloud = PointCloud(np.column_stack([xyz, intensity]).astype(np.float32))

    mean = np.select([labels == SPRAY, labels == VEHICLE], [cfg.score_separation, cfg.vehicle_score_mean], 0.0)
    scores = (mean + rng.normal(0.0, 1.0, len(xyz))).astype(np.float32)

    # radar returns sit on the rear face, at bumper to body height
    k = cfg.radar_targets_on_vehicle
    local = np.column_stack([
        -l / 2.0 + rng.uniform(0.01, 0.1, k),
        rng.uniform(-0.45 * w, 0.45 * w, k),
        rng.uniform(0.05, 0.7, k) - h / 2.0,
    ])
    tpos = _to_world(local, gt.x, gt.y, gt.z, yaw)
    rel_speed = rng.uniform(-2.0, 2.0)
    radial = rel_speed * tpos[:, 0] / np.hypot(tpos[:, 0], tpos[:, 1])
    targets = np.column_stack([tpos, radial])
    if len(spray) and rng.random() < cfg.clutter_target_prob:
        p = spray[rng.integers(len(spray))]
        targets = np.vstack([targets, [p[0], p[1], p[2], rng.normal(0.0, 0.5)]])

    return FrameBundle(
        frame_id=frame_id if frame_id is not None else f"{cfg.seed:06d}",
        cloud=cloud,
        gt_boxes=(gt,),
        labels=labels,
        scores=scores,
        radar=RadarTargetList(targets),
    )


# (x range, half width, z range); the far region spans ~7x the volume of the near one
CLUTTER_NEAR = ((2.0, 7.0), 3.0, (0.2, 2.2))
CLUTTER_FAR = ((24.0, 36.0), 6.0, (0.2, 3.2))


def generate_clutter_scene(seed: int, clutter_points: int = 60, ground_points: int = 2000) -> FrameBundle:
    """Ground plane plus dense clutter within 8 m and scattered clutter beyond 20 m.

    Both clutter regions hold ``clutter_points`` points labeled spray. Used to
    probe range-dependent filters.
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    ground = np.column_stack([
        rng.uniform(*GROUND_X, ground_points),
        rng.uniform(*GROUND_Y, ground_points),
        rng.normal(0.0, 0.03, ground_points),
    ])

    def block(region):
        x_range, half_y, z_range = region
        return np.column_stack([
            rng.uniform(*x_range, clutter_points),
            rng.uniform(-half_y, half_y, clutter_points),
            rng.uniform(*z_range, clutter_points),
        ])

    xyz = np.vstack([ground, block(CLUTTER_NEAR), block(CLUTTER_FAR)])
    labels = np.concatenate([np.full(ground_points, BACKGROUND), np.full(2 * clutter_points, SPRAY)]).astype(np.uint8)
    cloud = PointCloud.from_xyz(xyz, rng.uniform(0.0, 1.0, len(xyz)))
    return FrameBundle(f"clutter_{seed:06d}", cloud, (), labels)


def generate_dataset(cfg: SceneConfig, frame_count: int, base_seed: int, out_dir) -> DatasetManifest:
    """Write ``frame_count`` scenes with seeds base_seed + i plus ``manifest.json``."""
    if frame_count < 0:
        raise ValueError("frame_count must be non-negative")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    records = []
    for i in range(frame_count):
        scene = generate_scene(replace(cfg, seed=base_seed + i), frame_id=f"{i:06d}")
        try:
            records.append(write_frame(out_dir, scene))
        except OSError as exc:
            raise OSError(f"failed writing frame {scene.frame_id} under {out_dir}: {exc}") from exc
    manifest = DatasetManifest(out_dir, records)
    meta = {"scene_config": {k: v for k, v in asdict(cfg).items() if k != "seed"}, "base_seed": base_seed}
    write_manifest(out_dir / "manifest.json", manifest, extra=meta)
    return manifest


def tree_digest(root) -> str:
    """SHA-256 over relative paths and contents of every file below ``root``."""
    root = Path(root)
    h = hashlib.sha256()
    for p in sorted(q for q in root.rglob("*") if q.is_file()):
        h.update(json.dumps(str(p.relative_to(root))).encode())
        h.update(hashlib.sha256(p.read_bytes()).digest())
    return h.hexdigest()
