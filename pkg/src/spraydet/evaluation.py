"""Range-binned 3D average precision."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import Box3D, Detection, bev_range, box_iou_3d

INTERPOLATIONS = ("all-point", "40-point")


@dataclass(frozen=True)
class EvalConfig:
    iou_threshold: float = 0.7
    range_bins: tuple = ((0.0, 25.0), (25.0, math.inf))
    interpolation: str = "all-point"

    def __post_init__(self):
        if not (0.0 < self.iou_threshold <= 1.0):
            raise ValueError(f"iou_threshold must lie in (0, 1], got {self.iou_threshold}")
        if self.interpolation not in INTERPOLATIONS:
            raise ValueError(f"interpolation must be one of {INTERPOLATIONS}")
        bins = tuple(sorted((float(lo), math.inf if hi is None else float(hi)) for lo, hi in self.range_bins))
        for lo, hi in bins:
            if not (0.0 <= lo < hi):
                raise ValueError(f"bad range bin ({lo}, {hi})")
        for (_, hi), (lo, _) in zip(bins, bins[1:]):
            if lo < hi:
                raise ValueError("range bins overlap")
        object.__setattr__(self, "range_bins", bins)


def bin_name(lo: float, hi: float) -> str:
    if math.isinf(hi):
        return "overall" if lo == 0 else f">{lo:g}m"
    return f"{lo:g}-{hi:g}m"


@dataclass(frozen=True)
class FrameMatch:
    """Matching outcome in the original detection order."""

    det_tp: tuple  # bool per detection
    det_gt: tuple  # matched GT index per detection, -1 for false positives
    gt_matched: tuple  # bool per GT


def match_frame(dets, gts, iou_threshold: float = 0.7) -> FrameMatch:
    """Greedy matching in descending confidence.

    Each detection takes the still-unmatched GT with the highest IoU and is a
    true positive if that IoU reaches the threshold.
    """
    n_det, n_gt = len(dets), len(gts)
    iou = np.zeros((n_det, n_gt))
    for i, d in enumerate(dets):
        for j, g in enumerate(gts):
            iou[i, j] = box_iou_3d(d.box, g)
    order = np.argsort([-d.confidence for d in dets], kind="stable")
    det_gt = [-1] * n_det
    gt_taken = np.zeros(n_gt, dtype=bool)
    for i in order:
        if gt_taken.all():
            break
        cand = np.where(gt_taken, -1.0, iou[i])
        j = int(np.argmax(cand))
        if cand[j] >= iou_threshold:
            det_gt[i] = j
            gt_taken[j] = True
    return FrameMatch(tuple(g >= 0 for g in det_gt), tuple(det_gt), tuple(bool(t) for t in gt_taken))


def pr_curve(confidences, is_tp, n_gt: int) -> tuple[np.ndarray, np.ndarray]:
    """Recall and precision at every distinct confidence level, highest first.

    Tied confidences enter the curve together, so the result does not depend
    on the order of tied detections.
    """
    conf = np.asarray(confidences, dtype=np.float64)
    tp = np.asarray(is_tp, dtype=bool)
    if conf.size == 0:
        return np.zeros(0), np.zeros(0)
    order = np.argsort(-conf, kind="stable")
    conf, tp = conf[order], tp[order]
    ctp = np.cumsum(tp)
    cfp = np.cumsum(~tp)
    last_of_level = np.append(conf[1:] != conf[:-1], True)
    ctp, cfp = ctp[last_of_level], cfp[last_of_level]
    return ctp / n_gt, ctp / (ctp + cfp)


def average_precision(confidences, is_tp, n_gt: int, interpolation: str = "all-point") -> float | None:
    """AP over pooled detections; None when there is no ground truth."""
    if n_gt <= 0:
        return None
    recall, precision = pr_curve(confidences, is_tp, n_gt)
    if recall.size == 0:
        return 0.0
    if interpolation == "all-point":
        interp = np.maximum.accumulate(precision[::-1])[::-1]
        steps = np.diff(np.concatenate(([0.0], recall)))
        return float(np.sum(steps * interp))
    if interpolation == "40-point":
        total = 0.0
        for k in range(1, 41):
            reach = precision[recall >= k / 40.0 - 1e-12]
            total += reach.max() if reach.size else 0.0
        return total / 40.0
    raise ValueError(f"unknown interpolation {interpolation!r}")


@dataclass
class BinResult:
    name: str
    lo: float
    hi: float
    ap: float | None
    n_gt: int
    tp: int
    fp: int
    fn: int
    recall: np.ndarray = field(repr=False, default_factory=lambda: np.zeros(0))
    precision: np.ndarray = field(repr=False, default_factory=lambda: np.zeros(0))

    @property
    def ghosts(self) -> int:
        """False positives whose center falls in this bin."""
        return self.fp


@dataclass
class EvalReport:
    bins: list[BinResult]
    iou_threshold: float
    interpolation: str

    def __getitem__(self, name: str) -> BinResult:
        for b in self.bins:
            if b.name == name:
                return b
        raise KeyError(name)

    @property
    def overall(self) -> BinResult:
        return self["overall"]

    def ap(self, name: str = "overall") -> float | None:
        return self[name].ap


def _in_bin(r: float, lo: float, hi: float) -> bool:
    return lo <= r < hi


def evaluate_ranges(frames, cfg: EvalConfig = EvalConfig()) -> EvalReport:
    """Match per frame, then pool per range bin.

    A GT belongs to the bin of its center range. A true positive counts in its
    GT's bin; a false positive counts in the bin of its own center.
    """
    bins = list(cfg.range_bins)
    if (0.0, math.inf) not in bins:
        bins.append((0.0, math.inf))
    pooled = {b: ([], [], 0) for b in bins}
    for fr in frames:
        if fr.detections is None:
            raise ValueError(f"frame {fr.frame_id} carries no detections")
        dets, gts = list(fr.detections), list(fr.gt_boxes)
        m = match_frame(dets, gts, cfg.iou_threshold)
        gt_r = [bev_range(g) for g in gts]
        for b in bins:
            conf, tp, n_gt = pooled[b]
            n_gt += sum(_in_bin(r, *b) for r in gt_r)
            for d, j in zip(dets, m.det_gt):
                r = gt_r[j] if j >= 0 else bev_range(d.box)
                if _in_bin(r, *b):
                    conf.append(d.confidence)
                    tp.append(j >= 0)
            pooled[b] = (conf, tp, n_gt)
    results = []
    for lo, hi in bins:
        conf, tp, n_gt = pooled[(lo, hi)]
        n_tp = int(sum(tp))
        rec, prec = pr_curve(conf, tp, n_gt) if n_gt else (np.zeros(0), np.zeros(0))
        results.append(
            BinResult(
                bin_name(lo, hi), lo, hi,
                average_precision(conf, tp, n_gt, cfg.interpolation),
                n_gt, n_tp, len(tp) - n_tp, n_gt - n_tp, rec, prec,
            )
        )
    return EvalReport(results, cfg.iou_threshold, cfg.interpolation)


REPORT_FIELDS = ("variant", "bin", "lo", "hi", "ap", "n_gt", "tp", "fp", "fn", "ghosts", "iou_threshold", "interpolation")


def report_rows(variant: str, report: EvalReport) -> list[dict]:
    rows = []
    for b in report.bins:
        rows.append({
            "variant": variant,
            "bin": b.name,
            "lo": b.lo,
            "hi": "inf" if math.isinf(b.hi) else b.hi,
            "ap": "undefined" if b.ap is None else f"{b.ap:.6f}",
            "n_gt": b.n_gt,
            "tp": b.tp,
            "fp": b.fp,
            "fn": b.fn,
            "ghosts": b.ghosts,
            "iou_threshold": report.iou_threshold,
            "interpolation": report.interpolation,
        })
    return rows


def format_table(reports: dict, title: str = "3D AP") -> str:
    """Plain-text table, one row per variant and one column per range bin (AP in %)."""
    names = [b.name for b in next(iter(reports.values())).bins]
    first = next(iter(reports.values()))
    head = f"{title} (IoU {first.iou_threshold:g}, {first.interpolation})"
    width = max(12, *(len(v) for v in reports))
    lines = [head, f"{'variant':<{width}}" + "".join(f"{n:>12}" for n in names)]
    for variant, rep in reports.items():
        cells = ["n/a" if b.ap is None else f"{100 * b.ap:.2f}" for b in rep.bins]
        lines.append(f"{variant:<{width}}" + "".join(f"{c:>12}" for c in cells))
    return "\n".join(lines) + "\n"
