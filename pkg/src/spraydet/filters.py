"""Per-point adverse-weather filtering: score thresholding, DSOR and DROR."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .geometry import SPRAY, PointCloud, check_labels, check_scores
from .spatial import SpatialIndex, knn_mean_distance

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class FilterResult:
    keep_mask: np.ndarray
    cloud: PointCloud

    @property
    def kept(self) -> int:
        return len(self.cloud)


@dataclass(frozen=True)
class DsorParams:
    k: int = 5
    s: float = 1.0
    m: float = 0.3

    def __post_init__(self):
        if self.k < 1 or self.s <= 0 or self.m <= 0:
            raise ValueError(f"invalid DSOR parameters {self}")


@dataclass(frozen=True)
class DrorParams:
    # 3 x the 0.16 deg horizontal resolution of a typical spinning LiDAR
    alpha: float = 3 * 0.16 * math.pi / 180.0
    min_radius: float = 0.04
    min_neighbors: int = 3

    def __post_init__(self):
        if self.alpha <= 0 or self.min_radius <= 0 or self.min_neighbors <= 0:
            raise ValueError(f"invalid DROR parameters {self}")


def _result(cloud: PointCloud, mask: np.ndarray) -> FilterResult:
    mask = np.ascontiguousarray(mask, dtype=bool)
    mask.flags.writeable = False
    return FilterResult(mask, cloud.select(mask))


def threshold_filter(cloud: PointCloud, scores, tau: float) -> FilterResult:
    """Keep points whose anomaly score is at most ``tau``."""
    scores = check_scores(scores, len(cloud))
    if not math.isfinite(tau):
        raise ValueError(f"threshold must be finite, got {tau}")
    # np.float64 keeps float32 scores from being compared at float32 precision
    return _result(cloud, scores <= np.float64(tau))


def calibrate_threshold(valid_scores, tpr: float) -> float:
    """Smallest score with at least ceil(tpr * n) valid scores at or below it."""
    valid_scores = np.asarray(valid_scores, dtype=np.float64).ravel()
    if valid_scores.size == 0:
        raise ValueError("calibration needs at least one valid score")
    if not (0.0 < tpr <= 1.0):
        raise ValueError(f"tpr must lie in (0, 1], got {tpr}")
    if not np.isfinite(valid_scores).all():
        raise ValueError("calibration scores must be finite")
    n = valid_scores.size
    # round away float noise such as 0.95 * 100 = 95.00000000000001
    need = max(1, math.ceil(round(tpr * n, 9)))
    return float(np.partition(valid_scores, need - 1)[need - 1])


def dsor_filter(cloud: PointCloud, params: DsorParams = DsorParams()) -> FilterResult:
    """Dynamic statistical outlier removal.

    The global mean-distance threshold mu + s * sigma is scaled per point by
    m * range, so sparse far returns survive while isolated near returns go.
    """
    n = len(cloud)
    if n <= params.k:
        logger.warning("DSOR skipped: %d points is not more than k=%d", n, params.k)
        return _result(cloud, np.ones(n, dtype=bool))
    mean_d = knn_mean_distance(SpatialIndex(cloud), params.k)
    global_t = mean_d.mean() + params.s * mean_d.std()
    xy = cloud.xyz[:, :2].astype(np.float64)
    rng = np.maximum(np.hypot(xy[:, 0], xy[:, 1]), 1.0)
    return _result(cloud, mean_d < global_t * params.m * rng)


def dror_filter(cloud: PointCloud, params: DrorParams = DrorParams()) -> FilterResult:
    """Dynamic radius outlier removal: search radius grows with range."""
    n = len(cloud)
    if n == 0:
        return _result(cloud, np.zeros(0, dtype=bool))
    xy = cloud.xyz[:, :2].astype(np.float64)
    radii = np.maximum(params.min_radius, params.alpha * np.hypot(xy[:, 0], xy[:, 1]))
    counts = SpatialIndex(cloud).radius_counts(radii)
    return _result(cloud, counts >= params.min_neighbors)


def filter_metrics(mask, labels) -> dict[str, float | None]:
    """Valid-point TPR plus spray recall and precision; None where undefined."""
    mask = np.asarray(mask, dtype=bool)
    labels = check_labels(labels, len(mask))
    spray = labels == SPRAY
    valid = ~spray
    removed = ~mask

    def ratio(num, den):
        return None if den == 0 else num / den

    return {
        "valid_tpr": ratio(int((mask & valid).sum()), int(valid.sum())),
        "noise_recall": ratio(int((removed & spray).sum()), int(spray.sum())),
        "noise_precision": ratio(int((removed & spray).sum()), int(removed.sum())),
    }
