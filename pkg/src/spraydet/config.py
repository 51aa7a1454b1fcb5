"""Run configuration: one YAML file per run, unknown keys rejected."""

from __future__ import annotations

import math
from dataclasses import asdict, fields
from pathlib import Path

import yaml

from .detector import ClusterParams
from .evaluation import EvalConfig
from .filters import DrorParams, DsorParams
from .pipeline import VARIANTS, FilterConfig, PipelineConfig
from .radar import GateConfig
from .simulator import SceneConfig


class ConfigError(ValueError):
    pass


SECTIONS = {
    "manifest": None,
    "output": None,
    "workers": None,
    "label_remap": None,
    "simulate": {"frames", "base_seed", "scene"},
    "filter": {"method", "tau", "tpr", "calibration", "dsor", "dror"},
    "detector": {"source", "link_radius", "min_points", "ground_z", "max_box"},
    "gate": {"enabled", "gamma", "require_count", "ignore_target_z"},
    "eval": {"iou_threshold", "range_bins", "interpolation"},
    "pipeline": {"variants"},
    "sweep": {"tpr_levels", "gamma_levels"},
    "calibrate": {"tpr_levels"},
}


def _check_keys(where: str, given: dict, allowed) -> None:
    if not isinstance(given, dict):
        raise ConfigError(f"{where} must be a mapping")
    unknown = set(given) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {sorted(unknown)}")


def _build(cls, where: str, raw: dict | None, **overrides):
    raw = dict(raw or {})
    _check_keys(where, raw, {f.name for f in fields(cls)} - set(overrides))
    try:
        return cls(**raw, **overrides)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def load_config(path) -> dict:
    try:
        doc = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    doc = doc or {}
    _check_keys("config", doc, SECTIONS)
    for name, keys in SECTIONS.items():
        if keys is not None and doc.get(name) is not None:
            _check_keys(name, doc[name], keys)
    return doc


def scene_config(doc: dict) -> SceneConfig:
    return _build(SceneConfig, "simulate.scene", (doc.get("simulate") or {}).get("scene"), seed=0)


def filter_config(doc: dict) -> FilterConfig:
    raw = dict(doc.get("filter") or {})
    raw.pop("calibration", None)
    dsor = _build(DsorParams, "filter.dsor", raw.pop("dsor", None))
    dror = _build(DrorParams, "filter.dror", raw.pop("dror", None))
    return _build(FilterConfig, "filter", raw, dsor=dsor, dror=dror)


def detector_config(doc: dict) -> ClusterParams | None:
    raw = dict(doc.get("detector") or {})
    source = raw.pop("source", "cluster")
    if source not in ("cluster", "external"):
        raise ConfigError(f"detector.source must be 'cluster' or 'external', got {source!r}")
    params = _build(ClusterParams, "detector", raw)
    return params if source == "cluster" else None


def gate_config(doc: dict) -> GateConfig | None:
    raw = dict(doc.get("gate") or {})
    enabled = raw.pop("enabled", True)
    gate = _build(GateConfig, "gate", raw)
    return gate if enabled else None


def eval_config(doc: dict) -> EvalConfig:
    raw = dict(doc.get("eval") or {})
    if "range_bins" in raw:
        try:
            raw["range_bins"] = tuple((lo, math.inf if hi is None else hi) for lo, hi in raw["range_bins"])
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"eval.range_bins: {exc}") from exc
    return _build(EvalConfig, "eval", raw)


def pipeline_config(doc: dict) -> PipelineConfig:
    return PipelineConfig(filter_config(doc), detector_config(doc), gate_config(doc), eval_config(doc))


def variants(doc: dict) -> list[str] | None:
    names = (doc.get("pipeline") or {}).get("variants")
    if names is None:
        return None
    bad = [n for n in names if n not in VARIANTS]
    if bad:
        raise ConfigError(f"pipeline.variants: unknown variant(s) {bad}; choose from {list(VARIANTS)}")
    return list(names)


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, float) and math.isinf(obj):
        return None
    return obj


def resolved(doc: dict) -> dict:
    """Config with every default spelled out; the output path is left out on purpose."""
    out = {k: v for k, v in doc.items() if k != "output"}
    pcfg = pipeline_config(doc)
    filt = asdict(pcfg.filter)
    if (doc.get("filter") or {}).get("calibration") is not None:
        filt["calibration"] = doc["filter"]["calibration"]
    out["filter"] = filt
    det = {"source": "cluster" if pcfg.detector is not None else "external"}
    det.update(asdict(pcfg.detector or ClusterParams()))
    out["detector"] = det
    out["gate"] = {"enabled": pcfg.gate is not None, **asdict(pcfg.gate or GateConfig())}
    out["eval"] = asdict(pcfg.eval)
    if "simulate" in doc:
        sim = dict(doc["simulate"] or {})
        sim["scene"] = {k: v for k, v in asdict(scene_config(doc)).items() if k != "seed"}
        out["simulate"] = sim
    return _plain(out)


def dump(doc: dict) -> str:
    return yaml.safe_dump(doc, sort_keys=True, default_flow_style=False)
