"""Unfolded low-rank + sparse + noise decomposition network for infrared
small-target detection, with a classical solver, synthetic scenes, metrics and
a training/evaluation harness."""

from .metrics import LossConfig, MetricReport, roc_auc, soft_iou_loss, total_loss
from .model import LRPCANet, ModelConfig, count_parameters, model_forward
from .rpca import RPCAConfig, RPCAResult, rpca_solve, soft_threshold, svt
from .scenes import NoiseSpec, Sample, SceneConfig, add_noise, make_scene, synthetic_dataset

__version__ = "0.1.0"

__all__ = [
    "LRPCANet", "LossConfig", "MetricReport", "ModelConfig", "NoiseSpec",
    "RPCAConfig", "RPCAResult", "Sample", "SceneConfig", "add_noise",
    "count_parameters", "make_scene", "model_forward", "roc_auc", "rpca_solve",
    "soft_iou_loss", "soft_threshold", "svt", "synthetic_dataset", "total_loss",
]
