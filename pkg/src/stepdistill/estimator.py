"""Scikit-learn style facade over the trainer.

SelfDistillationDetector exposes the whole pipeline as a fit/predict/score
estimator so it composes with sklearn tooling (get_params, set_params,
clone, grid search). X is a sequence of 2D grayscale images and y the
matching sequence of LabelSet ground truths.
"""

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .config import ExperimentConfig, validate_config
from .data import SyntheticScene
from .exceptions import InvalidInputError
from .metrics import Detection
from .pyramids import LabelSet
from .training import decode_detections, evaluate, train


class SelfDistillationDetector(BaseEstimator):
    """Tiny multi-scale detector trained with stepwise self-distillation."""

    def __init__(self, loss_id="js", temperature=1.0, lambda1=75.0, lambda2=80.0,
                 warmup_end_step=40, switch_step=240, freeze_end_step=40,
                 base_rate=0.2, decay_start_step=240, decay_factor=0.5,
                 decay_interval=40, end_step=340, total_steps=340, batch_size=8,
                 scale_shapes=((16, 16), (8, 8)), num_classes=3,
                 stop_teacher_grad=False, eval_interval=20, eval_count=0,
                 score_threshold=0.25, seed=0):
        self.loss_id = loss_id
        self.temperature = temperature
        self.lambda1 = lambda1
        self.lambda2 = lambda2
        self.warmup_end_step = warmup_end_step
        self.switch_step = switch_step
        self.freeze_end_step = freeze_end_step
        self.base_rate = base_rate
        self.decay_start_step = decay_start_step
        self.decay_factor = decay_factor
        self.decay_interval = decay_interval
        self.end_step = end_step
        self.total_steps = total_steps
        self.batch_size = batch_size
        self.scale_shapes = scale_shapes
        self.num_classes = num_classes
        self.stop_teacher_grad = stop_teacher_grad
        self.eval_interval = eval_interval
        self.eval_count = eval_count
        self.score_threshold = score_threshold
        self.seed = seed

    def _as_scenes(self, X, y) -> list[SyntheticScene]:
        if y is None:
            raise InvalidInputError("y (a LabelSet per image) is required")
        if len(X) != len(y):
            raise InvalidInputError(f"X has {len(X)} images but y has {len(y)} label sets")
        scenes = []
        for image, labels in zip(X, y):
            if not isinstance(labels, LabelSet):
                raise InvalidInputError("every y entry must be a LabelSet")
            scenes.append(SyntheticScene(np.asarray(image, dtype=np.float64), labels))
        return scenes

    def _config(self, scenes) -> ExperimentConfig:
        w, h = scenes[0].labels.image_size
        config = ExperimentConfig(
            seed=self.seed,
            dataset_count=len(scenes),
            eval_count=self.eval_count,
            image_width=w,
            image_height=h,
            num_classes=self.num_classes,
            scale_shapes=tuple(tuple(s) for s in self.scale_shapes),
            loss_id=self.loss_id,
            temperature=self.temperature,
            stop_teacher_grad=self.stop_teacher_grad,
            base_rate=self.base_rate,
            decay_start_step=self.decay_start_step,
            decay_factor=self.decay_factor,
            decay_interval=self.decay_interval,
            end_step=self.end_step,
            warmup_end_step=self.warmup_end_step,
            switch_step=self.switch_step,
            lambda1=self.lambda1,
            lambda2=self.lambda2,
            freeze_end_step=self.freeze_end_step,
            total_steps=self.total_steps,
            batch_size=self.batch_size,
            eval_interval=self.eval_interval,
            score_threshold=self.score_threshold,
        )
        validate_config(config)
        return config

    def fit(self, X, y):
        """Train on images X and ground truths y; returns self."""
        scenes = self._as_scenes(X, y)
        config = self._config(scenes)
        result = train(config, scenes)
        self.student_ = result.student
        self.head_ = result.head
        self.encoder_ = result.encoder
        self.run_log_ = result.run_log
        self.config_ = config
        return self

    def predict(self, X) -> list[list[Detection]]:
        """Decoded, NMS-filtered detections for each image."""
        check_is_fitted(self, "student_")
        out = []
        for i, image in enumerate(X):
            image = np.asarray(image, dtype=np.float64)
            h, w = image.shape
            out.append(decode_detections(self.student_, self.head_, image, (w, h),
                                         self.score_threshold, i))
        return out

    def score(self, X, y) -> float:
        """Overall AP (IoU 0.50:0.05:0.95) on the given scenes; 0.0 if undefined."""
        check_is_fitted(self, "student_")
        scenes = self._as_scenes(X, y)
        report = evaluate(self.student_, self.head_, scenes, self.score_threshold)
        return report.ap if report.ap is not None else 0.0
