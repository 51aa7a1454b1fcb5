"""Command-line front end: ``spraydet <subcommand> CONFIG``.

Every run writes ``resolved_config.yaml`` (defaults spelled out, input
digests recorded, output path omitted) into its run directory.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io as _io
import json
import logging
import math
import sys
from dataclasses import replace
from pathlib import Path

from . import config as C
from .detector import cluster_detect
from .evaluation import REPORT_FIELDS, format_table, report_rows
from .filters import calibrate_threshold, filter_metrics
from .io import (
    DatasetManifest,
    FormatError,
    atomic_write_text,
    load_frame,
    load_manifest,
    write_frame,
    write_manifest,
    write_mask,
    write_detections_jsonl,
)
from .pipeline import (
    StageInputError,
    apply_filter,
    default_workers,
    map_frames,
    pooled_valid_scores,
    resolve_tau,
    run_pipeline,
    sweep_gamma,
    sweep_tau,
)
from .radar import GateConfig, gate_detections
from .simulator import generate_dataset

logger = logging.getLogger("spraydet")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_INTERNAL = 4

SWEEP_FIELDS = ("sweep", "level", "tau", "bin", "lo", "hi", "ap", "n_gt", "tp", "fp", "fn", "ghosts")


class _Run:
    """Resolved inputs of one invocation."""

    def __init__(self, args, doc: dict):
        self.doc = doc
        base = Path(args.config).resolve().parent
        if args.out is not None:
            self.out = Path(args.out)
        elif doc.get("output") is not None:
            self.out = _resolve(base, doc["output"])
        else:
            raise C.ConfigError("no output directory: set 'output' or pass --out")
        manifest = args.manifest or doc.get("manifest")
        self.manifest_arg = manifest
        self.manifest = None if manifest is None else _resolve(base, manifest)
        if args.workers is not None:
            self.workers = args.workers
        elif doc.get("workers") is not None:
            self.workers = doc["workers"]
        else:
            self.workers = default_workers()
        if not isinstance(self.workers, int) or self.workers < 1:
            raise C.ConfigError(f"workers must be a positive integer, got {self.workers!r}")
        remap = doc.get("label_remap")
        try:
            self.label_remap = None if remap is None else {int(k): int(v) for k, v in remap.items()}
        except (AttributeError, TypeError, ValueError) as exc:
            raise C.ConfigError(f"label_remap must map integer codes to integer codes: {exc}") from exc
        self.calibration = None
        cal = (doc.get("filter") or {}).get("calibration")
        if cal is not None:
            self.calibration = _resolve(base, cal)
        self.pcfg = C.pipeline_config(doc)
        self.inputs: dict = {}

    def frames(self) -> list:
        if self.manifest is None:
            raise C.ConfigError("this subcommand needs an input 'manifest'")
        m = load_manifest(self.manifest)
        self.inputs["manifest"] = str(self.manifest.name)
        self.inputs["manifest_sha256"] = dataset_digest(m, self.manifest)
        return [load_frame(m, rec, self.label_remap) for rec in m.frames]

    def filter_config(self):
        """Filter config with tau taken from the calibration file when one is named."""
        fcfg = self.pcfg.filter
        if self.calibration is None:
            return fcfg
        if fcfg.tau is not None:
            raise C.ConfigError("set either filter.tau or filter.calibration, not both")
        tau = lookup_calibration(self.calibration, fcfg.tpr)
        self.inputs["calibration_sha256"] = _sha256(self.calibration.read_bytes())
        return replace(fcfg, tau=tau)

    def finish(self) -> None:
        doc = C.resolved(self.doc)
        doc["workers"] = self.workers
        if self.manifest_arg is not None:
            # as given, so identical configs in different run roots resolve identically
            doc["manifest"] = str(self.manifest_arg)
        if self.inputs:
            doc["inputs"] = self.inputs
        atomic_write_text(self.out / "resolved_config.yaml", C.dump(doc))


def _resolve(base: Path, p) -> Path:
    p = Path(p)
    return p if p.is_absolute() else base / p


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def dataset_digest(manifest: DatasetManifest, manifest_path: Path) -> str:
    """SHA-256 over the manifest and, in order, every file it references."""
    h = hashlib.sha256(Path(manifest_path).read_bytes())
    for rec in manifest.frames:
        for key in sorted(k for k in rec if k != "frame_id"):
            p = manifest.path(rec, key)
            if p is not None:
                h.update(hashlib.sha256(p.read_bytes()).digest())
    return h.hexdigest()


def lookup_calibration(path: Path, tpr: float) -> float:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        levels = doc["levels"]
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"{path}: not a calibration file ({exc})") from exc
    for entry in levels:
        if math.isclose(float(entry["tpr"]), tpr, rel_tol=0, abs_tol=1e-12):
            return float(entry["tau"])
    have = sorted(float(e["tpr"]) for e in levels)
    raise C.ConfigError(f"calibration file {path} has no level for tpr={tpr}; levels: {have}")


def _csv_text(fields, rows) -> str:
    buf = _io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(fields), lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow({k: _cell(row.get(k)) for k in fields})
    return buf.getvalue()


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return "inf" if math.isinf(v) else repr(v)
    return v


# ---------------------------------------------------------------------------
# subcommands


def cmd_simulate(run: _Run) -> None:
    sim = run.doc.get("simulate") or {}
    frames = sim.get("frames", 10)
    base_seed = sim.get("base_seed", 0)
    if not isinstance(frames, int) or frames < 0 or not isinstance(base_seed, int):
        raise C.ConfigError("simulate.frames and simulate.base_seed must be integers, frames >= 0")
    manifest = generate_dataset(C.scene_config(run.doc), frames, base_seed, run.out)
    logger.info("wrote %d frames to %s", len(manifest.frames), run.out)


def _filter_one(frame, fcfg, tau):
    res = apply_filter(frame, fcfg, tau)
    return res.keep_mask, res.cloud


def cmd_filter(run: _Run) -> None:
    frames = run.frames()
    fcfg = run.filter_config()
    tau = resolve_tau(frames, fcfg)
    results = map_frames(_Partial(_filter_one, fcfg=fcfg, tau=tau), frames, run.workers)
    records, rows = [], []
    for fr, (mask, cloud) in zip(frames, results):
        kept = fr.__class__(
            fr.frame_id,
            cloud,
            fr.gt_boxes,
            None if fr.labels is None else fr.labels[mask],
            None if fr.scores is None else fr.scores[mask],
            None,
            fr.radar,
        )
        records.append(write_frame(run.out, kept))
        write_mask(run.out / "masks" / f"{fr.frame_id}.mask", mask)
        row = {"frame_id": fr.frame_id, "n_in": len(mask), "n_kept": int(mask.sum())}
        if fr.labels is not None:
            row.update(filter_metrics(mask, fr.labels))
        rows.append(row)
    meta = {"filter": {"method": fcfg.method, "tau": tau}}
    write_manifest(run.out / "manifest.json", DatasetManifest(run.out, records), extra=meta)
    fields = ("frame_id", "n_in", "n_kept", "valid_tpr", "noise_recall", "noise_precision")
    atomic_write_text(run.out / "filter_metrics.csv", _csv_text(fields, rows))


def _detect_one(frame, params):
    return cluster_detect(frame.cloud, params)


def cmd_detect(run: _Run) -> None:
    if run.pcfg.detector is None:
        raise C.ConfigError("detect needs detector.source: cluster")
    frames = run.frames()
    dets = map_frames(_Partial(_detect_one, params=run.pcfg.detector), frames, run.workers)
    records = [write_frame(run.out, fr.with_detections(d)) for fr, d in zip(frames, dets)]
    write_manifest(run.out / "manifest.json", DatasetManifest(run.out, records))


def cmd_gate(run: _Run) -> None:
    gate = run.pcfg.gate or GateConfig()
    frames = run.frames()
    records, rows = [], []
    for fr in frames:
        if fr.detections is None:
            raise StageInputError(f"frame {fr.frame_id}: gate needs detections in the manifest")
        if fr.radar is None:
            raise StageInputError(f"frame {fr.frame_id}: gate needs radar targets in the manifest")
        kept = gate_detections(fr.detections, fr.radar, gate)
        records.append(write_frame(run.out, fr.with_detections(kept)))
        rows.append({"frame_id": fr.frame_id, "n_in": len(fr.detections), "n_kept": len(kept)})
    write_manifest(run.out / "manifest.json", DatasetManifest(run.out, records))
    atomic_write_text(run.out / "gate_summary.csv", _csv_text(("frame_id", "n_in", "n_kept"), rows))


def cmd_pipeline(run: _Run) -> None:
    frames = run.frames()
    cfg = replace(run.pcfg, filter=run.filter_config())
    names = C.variants(run.doc)
    runs = {}
    if names is None:
        runs["pipeline"] = run_pipeline(frames, cfg, run.workers)
    else:
        for name in names:
            runs[name] = run_pipeline(frames, cfg.variant(name), run.workers)
    rows = []
    for name, r in runs.items():
        rows += report_rows(name, r.report)
        dets = {fr.frame_id: fr.detections for fr in r.frames}
        write_detections_jsonl(run.out / "detections" / f"{name}.jsonl", dets)
    atomic_write_text(run.out / "report.csv", _csv_text(REPORT_FIELDS, rows))
    atomic_write_text(run.out / "report.txt", format_table({n: r.report for n, r in runs.items()}) + "\n")
    info = {n: {"tau": r.tau} for n, r in runs.items()}
    atomic_write_text(run.out / "run_info.json", json.dumps(info, indent=2, sort_keys=True) + "\n")


def _sweep_rows(sweep: str, level: float, tau, report) -> list[dict]:
    rows = []
    for row in report_rows(sweep, report):
        row = {k: row[k] for k in SWEEP_FIELDS if k in row}
        row.update(sweep=sweep, level=float(level), tau=tau)
        rows.append(row)
    return rows


def cmd_sweep(run: _Run) -> None:
    sweep = run.doc.get("sweep") or {}
    tpr_levels = sweep.get("tpr_levels")
    gamma_levels = sweep.get("gamma_levels")
    if tpr_levels is None and gamma_levels is None:
        raise C.ConfigError("sweep needs sweep.tpr_levels and/or sweep.gamma_levels")
    frames = run.frames()
    cfg = replace(run.pcfg, filter=run.filter_config())
    tables = []
    if tpr_levels is not None:
        runs = sweep_tau(frames, [float(x) for x in tpr_levels], cfg, run.workers)
        rows = []
        for level, r in runs.items():
            rows += _sweep_rows("tau", level, r.tau, r.report)
        atomic_write_text(run.out / "sweep_tau.csv", _csv_text(SWEEP_FIELDS, rows))
        tables.append(format_table({f"TPR {lvl:.2f}": r.report for lvl, r in runs.items()}, "3D AP by tau"))
    if gamma_levels is not None:
        base = run_pipeline(frames, replace(cfg, gate=None), run.workers)
        reports = sweep_gamma(base.frames, [float(g) for g in gamma_levels], cfg.eval, cfg.gate or GateConfig())
        rows = []
        for level, rep in reports.items():
            rows += _sweep_rows("gamma", level, base.tau, rep)
        atomic_write_text(run.out / "sweep_gamma.csv", _csv_text(SWEEP_FIELDS, rows))
        tables.append(format_table({f"gamma {g:g}": rep for g, rep in reports.items()}, "3D AP by gamma"))
    atomic_write_text(run.out / "sweep.txt", "\n\n".join(tables) + "\n")


def cmd_calibrate(run: _Run) -> None:
    levels = (run.doc.get("calibrate") or {}).get("tpr_levels", [0.90, 0.95, 0.99])
    frames = run.frames()
    valid = pooled_valid_scores(frames)
    out = []
    for level in levels:
        try:
            tau = calibrate_threshold(valid, float(level))
        except ValueError as exc:
            raise C.ConfigError(f"calibrate.tpr_levels: {exc}") from exc
        out.append({"tpr": float(level), "tau": tau})
    doc = {"levels": out, "n_valid": int(len(valid))}
    atomic_write_text(run.out / "calibration.json", json.dumps(doc, indent=2, sort_keys=True) + "\n")


COMMANDS = {
    "simulate": cmd_simulate,
    "filter": cmd_filter,
    "detect": cmd_detect,
    "gate": cmd_gate,
    "pipeline": cmd_pipeline,
    "sweep": cmd_sweep,
    "calibrate": cmd_calibrate,
}


class _Partial:
    """Picklable keyword binding for worker processes."""

    def __init__(self, fn, **kw):
        self.fn, self.kw = fn, kw

    def __call__(self, x):
        return self.fn(x, **self.kw)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="spraydet", description="Spray filtering and radar gating for LiDAR detection.")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("config", help="YAML run configuration")
    p.add_argument("--out", help="run directory (overrides 'output')")
    p.add_argument("--manifest", help="input manifest (overrides 'manifest')")
    p.add_argument("--workers", type=int, help="frame-parallel worker processes")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        run = _Run(args, C.load_config(args.config))
        run.out.mkdir(parents=True, exist_ok=True)
        COMMANDS[args.command](run)
        run.finish()
    except C.ConfigError as exc:
        print(f"spraydet: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FormatError, StageInputError, OSError, ValueError) as exc:
        print(f"spraydet: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001
        logger.debug("internal fault", exc_info=True)
        print(f"spraydet: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
