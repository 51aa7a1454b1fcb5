"""Radar-based ghost suppression: a detection survives only if radar backs it up."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import Detection, RadarTargetList, pad_box, points_in_box


@dataclass(frozen=True)
class GateConfig:
    gamma: float = 1.0
    require_count: int = 1
    # replace each target's z by the box center z (for radars without elevation)
    ignore_target_z: bool = False

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError(f"gamma must be non-negative, got {self.gamma}")
        if self.require_count < 1:
            raise ValueError(f"require_count must be >= 1, got {self.require_count}")


def supporting_targets(det: Detection, radar: RadarTargetList, cfg: GateConfig) -> int:
    """Number of radar targets inside the padded detection box."""
    if len(radar) == 0:
        return 0
    box = pad_box(det.box, cfg.gamma)
    pos = radar.positions
    if cfg.ignore_target_z:
        pos = pos.copy()
        pos[:, 2] = box.z
    return int(np.count_nonzero(points_in_box(box, pos)))


def gate_detections(dets, radar: RadarTargetList | None, cfg: GateConfig = GateConfig()) -> list[Detection]:
    """Keep detections whose padded box holds at least ``require_count`` targets.

    Order is preserved and one target may support several detections.
    """
    if radar is None:
        radar = RadarTargetList()
    return [d for d in dets if supporting_targets(d, radar, cfg) >= cfg.require_count]
