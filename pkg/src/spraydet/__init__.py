"""LiDAR spray filtering, radar ghost gating and range-binned 3D AP evaluation."""

from .detector import ClusterParams, cluster_detect
from .evaluation import EvalConfig, EvalReport, average_precision, evaluate_ranges, match_frame
from .filters import DrorParams, DsorParams, calibrate_threshold, dror_filter, dsor_filter, filter_metrics, threshold_filter
from .geometry import Box3D, Detection, PointCloud, RadarTargetList, box_iou_3d, pad_box
from .io import FrameBundle, load_dataset
from .pipeline import FilterConfig, PipelineConfig, run_pipeline, run_variants, sweep_gamma, sweep_tau
from .radar import GateConfig, gate_detections
from .simulator import SceneConfig, generate_dataset, generate_scene

__version__ = "0.1.0"
