"""Dual-domain homogeneous LiDAR/camera fusion pipeline on synthetic scenes."""

from .config import PipelineConfig, load_config, save_config
from .core import CameraModel, FeatureMap, GridSpec, SparseVoxelSet, voxelize
from .decoder import DetectionBox
from .evalmetrics import EvalResult, eval_detections
from .pipeline import (
    PipelineWeights,
    build_weights,
    detections_to_dicts,
    init_pipeline_weights,
    passthrough_weights,
    run_pipeline,
)
from .scene import SceneObject, SceneSpec, gen_scene, load_scene

__version__ = "0.1.0"

__all__ = [
    "CameraModel",
    "DetectionBox",
    "EvalResult",
    "FeatureMap",
    "GridSpec",
    "PipelineConfig",
    "PipelineWeights",
    "SceneObject",
    "SceneSpec",
    "SparseVoxelSet",
    "build_weights",
    "detections_to_dicts",
    "eval_detections",
    "gen_scene",
    "init_pipeline_weights",
    "load_config",
    "load_scene",
    "passthrough_weights",
    "run_pipeline",
    "save_config",
    "voxelize",
]
