"""Filter -> detect -> gate -> evaluate, plus the threshold and padding sweeps."""

from __future__ import annotations

import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from functools import partial

import numpy as np

from .detector import ClusterParams, cluster_detect
from .evaluation import EvalConfig, EvalReport, evaluate_ranges
from .filters import (
    DrorParams,
    DsorParams,
    FilterResult,
    calibrate_threshold,
    dror_filter,
    dsor_filter,
    threshold_filter,
)
from .geometry import SPRAY
from .io import FrameBundle
from .radar import GateConfig, gate_detections

logger = logging.getLogger(__name__)

FILTER_METHODS = ("none", "threshold", "dsor", "dror")
VARIANTS = {
    "none": (False, False),
    "filter": (True, False),
    "gate": (False, True),
    "filter+gate": (True, True),
}
WORKERS_ENV = "SPRAYDET_WORKERS"


class StageInputError(ValueError):
    """A frame lacks the data a pipeline stage needs."""


@dataclass(frozen=True)
class FilterConfig:
    method: str = "threshold"
    tau: float | None = None  # calibrated from ``tpr`` when unset
    tpr: float = 0.99
    dsor: DsorParams = field(default_factory=DsorParams)
    dror: DrorParams = field(default_factory=DrorParams)

    def __post_init__(self):
        if self.method not in FILTER_METHODS:
            raise ValueError(f"filter method must be one of {FILTER_METHODS}, got {self.method!r}")


@dataclass(frozen=True)
class PipelineConfig:
    filter: FilterConfig = field(default_factory=FilterConfig)
    detector: ClusterParams | None = field(default_factory=ClusterParams)  # None: use attached detections
    gate: GateConfig | None = field(default_factory=GateConfig)  # None: gating off
    eval: EvalConfig = field(default_factory=EvalConfig)

    def variant(self, name: str) -> "PipelineConfig":
        """Switch the filter and gate stages on or off as in the named variant."""
        use_filter, use_gate = VARIANTS[name]
        filt = self.filter if use_filter else replace(self.filter, method="none")
        if use_filter and filt.method == "none":
            filt = replace(filt, method="threshold")
        gate = (self.gate or GateConfig()) if use_gate else None
        return replace(self, filter=filt, gate=gate)


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


def map_frames(fn, items, workers: int = 1) -> list:
    items = list(items)
    if workers <= 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items, chunksize=max(1, len(items) // (4 * workers))))


def pooled_valid_scores(frames) -> np.ndarray:
    parts = []
    for fr in frames:
        if fr.scores is None or fr.labels is None:
            raise StageInputError(f"frame {fr.frame_id}: calibration needs scores and labels")
        parts.append(fr.scores[fr.labels != SPRAY])
    return np.concatenate(parts) if parts else np.zeros(0)


def resolve_tau(frames, fcfg: FilterConfig) -> float | None:
    if fcfg.method != "threshold":
        return None
    if fcfg.tau is not None:
        return float(fcfg.tau)
    return calibrate_threshold(pooled_valid_scores(frames), fcfg.tpr)


def apply_filter(frame: FrameBundle, fcfg: FilterConfig, tau: float | None = None) -> FilterResult:
    if fcfg.method == "none":
        mask = np.ones(len(frame.cloud), dtype=bool)
        return FilterResult(mask, frame.cloud)
    if fcfg.method == "threshold":
        if frame.scores is None:
            raise StageInputError(f"frame {frame.frame_id}: threshold filter needs per-point scores")
        if tau is None:
            raise StageInputError("threshold filter needs a resolved tau")
        return threshold_filter(frame.cloud, frame.scores, tau)
    if fcfg.method == "dsor":
        return dsor_filter(frame.cloud, fcfg.dsor)
    return dror_filter(frame.cloud, fcfg.dror)


def process_frame(frame: FrameBundle, cfg: PipelineConfig, tau: float | None) -> tuple[FrameBundle, FilterResult]:
    """Run the enabled stages on one frame; returns the frame with final detections."""
    filtered = apply_filter(frame, cfg.filter, tau)
    if cfg.detector is not None:
        dets = cluster_detect(filtered.cloud, cfg.detector)
    else:
        if frame.detections is None:
            raise StageInputError(f"frame {frame.frame_id}: no detector configured and no detections attached")
        dets = list(frame.detections)
    if cfg.gate is not None:
        if frame.radar is None:
            raise StageInputError(f"frame {frame.frame_id}: radar gate enabled but the frame has no radar targets")
        dets = gate_detections(dets, frame.radar, cfg.gate)
    return frame.with_detections(dets), filtered


@dataclass
class PipelineRun:
    report: EvalReport
    frames: list[FrameBundle]
    filter_results: list[FilterResult]
    tau: float | None


def run_pipeline(frames, cfg: PipelineConfig = PipelineConfig(), workers: int = 1, tau: float | None = None) -> PipelineRun:
    frames = list(frames)
    if tau is None:
        tau = resolve_tau(frames, cfg.filter)
    out = map_frames(partial(process_frame, cfg=cfg, tau=tau), frames, workers)
    done = [f for f, _ in out]
    return PipelineRun(evaluate_ranges(done, cfg.eval), done, [r for _, r in out], tau)


def run_variants(frames, cfg: PipelineConfig, names=tuple(VARIANTS), workers: int = 1) -> dict[str, PipelineRun]:
    return {name: run_pipeline(frames, cfg.variant(name), workers) for name in names}


def sweep_tau(frames, tpr_levels=(0.90, 0.95, 0.99), cfg: PipelineConfig = PipelineConfig(), workers: int = 1) -> dict[float, PipelineRun]:
    """Calibrate tau on the pooled valid scores at each TPR level and rerun the pipeline."""
    frames = list(frames)
    valid = pooled_valid_scores(frames)
    runs = {}
    for level in tpr_levels:
        tau = calibrate_threshold(valid, level)
        level_cfg = replace(cfg, filter=replace(cfg.filter, method="threshold", tau=tau, tpr=level))
        runs[level] = run_pipeline(frames, level_cfg, workers, tau=tau)
    return runs


def sweep_gamma(frames, gamma_levels=(0.0, 0.5, 1.0, 1.5), eval_cfg: EvalConfig = EvalConfig(), gate: GateConfig = GateConfig()) -> dict[float, EvalReport]:
    """Gate the frames' attached detections at each padding and evaluate."""
    frames = list(frames)
    for fr in frames:
        if fr.radar is None or fr.detections is None:
            raise StageInputError(f"frame {fr.frame_id}: gamma sweep needs detections and radar targets")
    out = {}
    for g in gamma_levels:
        gcfg = replace(gate, gamma=float(g))
        gated = [fr.with_detections(gate_detections(fr.detections, fr.radar, gcfg)) for fr in frames]
        out[g] = evaluate_ranges(gated, eval_cfg)
    return out
