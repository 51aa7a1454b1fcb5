"""Readers and writers for clouds, labels, scores, masks, boxes, radar and manifests.

All binary formats are headerless little-endian arrays:

* ``.bin``   float32 records of (x, y, z, intensity)
* ``.label`` uint32 class code per point
* ``.score`` float32 anomaly score per point
* ``.mask``  uint8 0/1 keep flag per point
"""

from __future__ import annotations

import csv
import json
import logging
import os
import tempfile
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .geometry import (
    BACKGROUND,
    LABEL_CODES,
    Box3D,
    Detection,
    PointCloud,
    RadarTargetList,
    check_labels,
    check_scores,
)

logger = logging.getLogger(__name__)

_F32 = np.dtype("<f4")
_U32 = np.dtype("<u4")


class FormatError(ValueError):
    """Raised when an input file violates its declared format."""


class ChannelDropWarning(UserWarning):
    pass


class UnknownLabelWarning(UserWarning):
    pass


@dataclass(frozen=True)
class FrameBundle:
    """One synchronized sensor snapshot plus its annotations."""

    frame_id: str
    cloud: PointCloud
    gt_boxes: tuple = ()
    labels: np.ndarray | None = None
    scores: np.ndarray | None = None
    detections: tuple | None = None
    radar: RadarTargetList | None = None

    def __post_init__(self):
        n = len(self.cloud)
        if self.labels is not None:
            object.__setattr__(self, "labels", check_labels(self.labels, n))
        if self.scores is not None:
            object.__setattr__(self, "scores", check_scores(self.scores, n))
        object.__setattr__(self, "gt_boxes", tuple(self.gt_boxes))
        if self.detections is not None:
            object.__setattr__(self, "detections", tuple(self.detections))

    def with_detections(self, dets) -> "FrameBundle":
        return replace(self, detections=tuple(dets))


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def _read_array(path, dtype: np.dtype, what: str) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) % dtype.itemsize:
        raise FormatError(f"{path}: size {len(raw)} is not a multiple of the {what} record size {dtype.itemsize}")
    return np.frombuffer(raw, dtype=dtype)


def read_cloud_bin(path, channels: int = 4) -> PointCloud:
    """Read float32 point records; channels beyond the first four are dropped."""
    if channels < 4:
        raise ValueError("point records need at least x, y, z, intensity")
    raw = Path(path).read_bytes()
    rec = channels * _F32.itemsize
    if len(raw) % rec:
        raise FormatError(f"{path}: truncated file ({len(raw)} bytes, record size {rec})")
    arr = np.frombuffer(raw, dtype=_F32).reshape(-1, channels)
    if channels > 4:
        warnings.warn(f"{path}: dropping {channels - 4} extra channel(s)", ChannelDropWarning, stacklevel=2)
        arr = arr[:, :4]
    bad = ~np.isfinite(arr).all(axis=1)
    if bad.any():
        raise FormatError(f"{path}: non-finite value in point {int(np.flatnonzero(bad)[0])}")
    return PointCloud(arr.astype(np.float32))


def write_cloud_bin(path, cloud: PointCloud) -> None:
    atomic_write_bytes(path, np.ascontiguousarray(cloud.points, dtype=_F32).tobytes())


def read_labels(path, remap: dict | None = None, expected_len: int | None = None) -> np.ndarray:
    """Read uint32 codes and map them to background/vehicle/spray.

    ``remap`` maps raw dataset codes to class codes; without it the codes are
    taken as-is. Codes outside the map fall back to background with a warning.
    """
    raw = _read_array(path, _U32, "label")
    if expected_len is not None and len(raw) != expected_len:
        raise FormatError(f"{path}: {len(raw)} labels for a cloud of {expected_len} points")
    table = {c: c for c in LABEL_CODES} if remap is None else {int(k): int(v) for k, v in remap.items()}
    if any(v not in LABEL_CODES for v in table.values()):
        raise ValueError(f"remap targets must be in {LABEL_CODES}")
    out = np.full(len(raw), BACKGROUND, dtype=np.uint8)
    known = np.zeros(len(raw), dtype=bool)
    for src, dst in table.items():
        hit = raw == src
        out[hit] = dst
        known |= hit
    n_unknown = int((~known).sum())
    if n_unknown:
        warnings.warn(f"{path}: {n_unknown} unknown label code(s) mapped to background", UnknownLabelWarning, stacklevel=2)
    return out


def write_labels(path, labels) -> None:
    atomic_write_bytes(path, np.asarray(labels).astype(_U32).tobytes())


def read_scores(path, expected_len: int | None = None) -> np.ndarray:
    scores = _read_array(path, _F32, "score").astype(np.float32)
    if expected_len is not None and len(scores) != expected_len:
        raise FormatError(f"{path}: {len(scores)} scores for a cloud of {expected_len} points")
    bad = ~np.isfinite(scores)
    if bad.any():
        raise FormatError(f"{path}: non-finite score at index {int(np.flatnonzero(bad)[0])}")
    return scores


def write_scores(path, scores) -> None:
    scores = np.asarray(scores, dtype=_F32)
    if not np.isfinite(scores).all():
        raise ValueError("scores must be finite")
    atomic_write_bytes(path, scores.tobytes())


def read_mask(path, expected_len: int | None = None) -> np.ndarray:
    raw = _read_array(path, np.dtype("u1"), "mask")
    if expected_len is not None and len(raw) != expected_len:
        raise FormatError(f"{path}: {len(raw)} mask entries for a cloud of {expected_len} points")
    if not np.isin(raw, (0, 1)).all():
        raise FormatError(f"{path}: mask entries must be 0 or 1")
    return raw.astype(bool)


def write_mask(path, mask) -> None:
    atomic_write_bytes(path, np.asarray(mask, dtype=bool).astype(np.uint8).tobytes())


_BOX_KEYS = ("x", "y", "z", "w", "l", "h", "theta")


def _box_record(frame_id: str, box: Box3D) -> dict:
    return {"frame_id": frame_id, **{k: getattr(box, k) for k in _BOX_KEYS}}


def _parse_jsonl(path, with_confidence: bool) -> dict[str, list]:
    grouped: dict[str, list] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                box = Box3D(*(rec[k] for k in _BOX_KEYS))
                if with_confidence:
                    item = Detection(box, rec["confidence"], rec.get("class", "vehicle"))
                else:
                    item = box
                fid = str(rec["frame_id"])
            except (ValueError, KeyError, TypeError) as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from exc
            grouped.setdefault(fid, []).append(item)
    return grouped


def read_detections_jsonl(path) -> dict[str, list[Detection]]:
    """Detections grouped by frame id, in file order."""
    return _parse_jsonl(path, with_confidence=True)


def write_detections_jsonl(path, dets_by_frame: dict) -> None:
    lines = []
    for fid, dets in dets_by_frame.items():
        for d in dets:
            rec = _box_record(fid, d.box)
            rec["confidence"] = d.confidence
            rec["class"] = d.class_id
            lines.append(json.dumps(rec))
    atomic_write_text(path, "".join(line + "\n" for line in lines))


def read_boxes_jsonl(path) -> dict[str, list[Box3D]]:
    return _parse_jsonl(path, with_confidence=False)


def write_boxes_jsonl(path, boxes_by_frame: dict) -> None:
    lines = [json.dumps({**_box_record(fid, b), "class": "vehicle"}) for fid, boxes in boxes_by_frame.items() for b in boxes]
    atomic_write_text(path, "".join(line + "\n" for line in lines))


RADAR_COLUMNS = ("x", "y", "z", "v")


def read_radar_csv(path) -> RadarTargetList:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise FormatError(f"{path}: missing header")
        header = [h.strip() for h in header]
        missing = [c for c in RADAR_COLUMNS if c not in header]
        if missing:
            raise FormatError(f"{path}: missing column(s) {missing}")
        cols = [header.index(c) for c in RADAR_COLUMNS]
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                rows.append([float(row[c]) for c in cols])
            except (ValueError, IndexError) as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from exc
    try:
        return RadarTargetList(np.array(rows, dtype=np.float64).reshape(-1, 4))
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from exc


def write_radar_csv(path, radar: RadarTargetList) -> None:
    lines = [",".join(RADAR_COLUMNS)]
    lines += [",".join(repr(float(v)) for v in row) for row in radar.targets]
    atomic_write_text(path, "\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# dataset manifests

FRAME_FILE_KEYS = ("cloud", "labels", "scores", "gt", "detections", "radar")


@dataclass
class DatasetManifest:
    """Ordered frame records; file paths are relative to ``root``."""

    root: Path
    frames: list[dict] = field(default_factory=list)

    def path(self, record: dict, key: str) -> Path | None:
        rel = record.get(key)
        return None if rel is None else self.root / rel

    def check_files(self) -> None:
        for rec in self.frames:
            for key in FRAME_FILE_KEYS:
                p = self.path(rec, key)
                if p is not None and not p.is_file():
                    raise FormatError(f"frame {rec['frame_id']}: {key} file not found: {p}")


def write_manifest(path, manifest: DatasetManifest, extra: dict | None = None) -> None:
    doc = {"frames": manifest.frames}
    if extra:
        doc.update(extra)
    atomic_write_text(path, json.dumps(doc, indent=2, sort_keys=True) + "\n")


def load_manifest(path) -> DatasetManifest:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: {exc}") from exc
    frames = doc.get("frames")
    if not isinstance(frames, list):
        raise FormatError(f"{path}: manifest needs a 'frames' list")
    for i, rec in enumerate(frames):
        if "frame_id" not in rec or "cloud" not in rec:
            raise FormatError(f"{path}: frame record {i} needs 'frame_id' and 'cloud'")
        unknown = set(rec) - {"frame_id", *FRAME_FILE_KEYS}
        if unknown:
            raise FormatError(f"{path}: frame record {i} has unknown keys {sorted(unknown)}")
    manifest = DatasetManifest(path.parent, frames)
    manifest.check_files()
    return manifest


def load_frame(manifest: DatasetManifest, record: dict, label_remap: dict | None = None) -> FrameBundle:
    fid = str(record["frame_id"])
    cloud = read_cloud_bin(manifest.path(record, "cloud"))
    n = len(cloud)
    labels = scores = dets = radar = None
    gt: list = []
    if record.get("labels"):
        labels = read_labels(manifest.path(record, "labels"), label_remap, expected_len=n)
    if record.get("scores"):
        scores = read_scores(manifest.path(record, "scores"), expected_len=n)
    if record.get("gt"):
        gt = read_boxes_jsonl(manifest.path(record, "gt")).get(fid, [])
    if record.get("detections"):
        dets = read_detections_jsonl(manifest.path(record, "detections")).get(fid, [])
    if record.get("radar"):
        radar = read_radar_csv(manifest.path(record, "radar"))
    return FrameBundle(fid, cloud, gt, labels, scores, dets, radar)


def load_dataset(path, label_remap: dict | None = None) -> list[FrameBundle]:
    manifest = load_manifest(path)
    return [load_frame(manifest, rec, label_remap) for rec in manifest.frames]


def write_frame(root, frame: FrameBundle) -> dict:
    """Write every present artifact of ``frame`` under ``root`` and return its manifest record."""
    root = Path(root)
    fid = frame.frame_id
    rec = {"frame_id": fid, "cloud": f"clouds/{fid}.bin"}
    write_cloud_bin(root / rec["cloud"], frame.cloud)
    if frame.labels is not None:
        rec["labels"] = f"labels/{fid}.label"
        write_labels(root / rec["labels"], frame.labels)
    if frame.scores is not None:
        rec["scores"] = f"scores/{fid}.score"
        write_scores(root / rec["scores"], frame.scores)
    rec["gt"] = f"gt/{fid}.jsonl"
    write_boxes_jsonl(root / rec["gt"], {fid: frame.gt_boxes})
    if frame.detections is not None:
        rec["detections"] = f"detections/{fid}.jsonl"
        write_detections_jsonl(root / rec["detections"], {fid: frame.detections})
    if frame.radar is not None:
        rec["radar"] = f"radar/{fid}.csv"
        write_radar_csv(root / rec["radar"], frame.radar)
    return rec
