"""Desk-scale stepwise self-distillation toolkit.

Jensen-Shannon distance distillation over feature pyramids, a learning-rate
coupled stepwise distillation coefficient, ratio-targeted coefficient
calibration, and a miniature end-to-end training harness with COCO-style
average-precision evaluation.
"""

__version__ = "0.1.0"

from .calibration import (AnalyticRatioProbe, CalibrationResult, TrainerRatioProbe,
                          calibrate_lambda, ratio_trace)
from .config import CompareSpec, ExperimentConfig, load_config, parse_config, serialize_config
from .data import SyntheticScene, bucket_census, generate_dataset, load_dataset, save_dataset
from .divergences import (LossValue, distill_loss, js_distance, js_distill_loss,
                          js_divergence, kl_distill_loss, kl_divergence,
                          loss_gradient_check, mse_distill_loss, normalize)
from .estimator import SelfDistillationDetector
from .exceptions import (CalibrationBracketError, DivergedError, InvalidBoxError,
                         InvalidConfigError, InvalidInputError, InvalidRangeError,
                         ShapeMismatchError, StepDistillError)
from .metrics import ApReport, Detection, ap_report, area_bucket, average_precision, iou
from .models import DetectionHead, StudentModel
from .pyramids import (FeaturePyramid, LabelEncoderParams, LabelSet, PyramidStats,
                       encode_labels, pyramid_stats, render_labels)
from .schedules import LambdaSchedule, LrSchedule, PhasePlan, is_frozen, lambda_at, lr_at
from .training import (RunLog, RunLogRow, TrainResult, assign_targets, detection_loss,
                       decode_detections, evaluate, load_checkpoint, save_checkpoint,
                       total_loss, train)

__all__ = [
    "AnalyticRatioProbe", "ApReport", "CalibrationBracketError", "CalibrationResult",
    "CompareSpec", "Detection", "DetectionHead", "DivergedError", "ExperimentConfig",
    "FeaturePyramid", "InvalidBoxError", "InvalidConfigError", "InvalidInputError",
    "InvalidRangeError", "LabelEncoderParams", "LabelSet", "LambdaSchedule", "LossValue",
    "LrSchedule", "PhasePlan", "PyramidStats", "RunLog", "RunLogRow",
    "SelfDistillationDetector", "ShapeMismatchError", "StepDistillError", "StudentModel",
    "SyntheticScene", "TrainResult", "TrainerRatioProbe", "ap_report", "area_bucket",
    "assign_targets", "average_precision", "bucket_census", "calibrate_lambda",
    "decode_detections", "detection_loss", "distill_loss", "encode_labels", "evaluate",
    "generate_dataset", "iou", "is_frozen", "js_distance", "js_distill_loss",
    "js_divergence", "kl_distill_loss", "kl_divergence", "lambda_at", "load_checkpoint",
    "load_config", "load_dataset", "loss_gradient_check", "lr_at", "mse_distill_loss",
    "normalize", "parse_config", "pyramid_stats", "ratio_trace", "render_labels",
    "save_checkpoint", "save_dataset", "serialize_config", "total_loss", "train",
]
