"""Piecewise-constant training schedules: learning rate, distillation coefficient, phases.

The defaults elsewhere in the package keep the proportions of a long
detector run: the backbone is frozen for the first ~11.8% of steps, the
coefficient steps up at ~70.6% (where learning-rate decay begins), and the
learning rate reaches exactly 0 at the final step.
"""

from dataclasses import dataclass

from .exceptions import InvalidConfigError


@dataclass(frozen=True)
class LrSchedule:
    """Step-decay learning rate: constant, then decayed every interval, then 0."""

    base_rate: float
    decay_start_step: int
    decay_factor: float
    decay_interval: int
    end_step: int

    def __post_init__(self):
        if self.base_rate <= 0:
            raise InvalidConfigError(f"base_rate must be positive, got {self.base_rate}")
        if not 0 < self.decay_factor < 1:
            raise InvalidConfigError(f"decay_factor must lie in (0, 1), got {self.decay_factor}")
        if self.decay_interval < 1:
            raise InvalidConfigError(f"decay_interval must be >= 1, got {self.decay_interval}")
        if self.end_step < 1:
            raise InvalidConfigError(f"end_step must be >= 1, got {self.end_step}")
        if not 0 <= self.decay_start_step < self.end_step:
            raise InvalidConfigError(
                f"decay_start_step {self.decay_start_step} must lie in [0, end_step)"
            )


def lr_at(schedule: LrSchedule, step: int) -> float:
    """Rate at a step: base before decay starts, decayed per interval after, 0 at the end."""
    if step >= schedule.end_step:
        return 0.0
    if step < schedule.decay_start_step:
        return schedule.base_rate
    decays = 1 + (step - schedule.decay_start_step) // schedule.decay_interval
    return schedule.base_rate * schedule.decay_factor ** decays


@dataclass(frozen=True)
class LambdaSchedule:
    """Distillation coefficient: 0 during warmup, lambda1 until the switch, lambda2 after."""

    warmup_end_step: int
    switch_step: int
    lambda1: float
    lambda2: float

    def __post_init__(self):
        if self.warmup_end_step < 0:
            raise InvalidConfigError(f"warmup_end_step must be >= 0, got {self.warmup_end_step}")
        if self.switch_step < 1:
            raise InvalidConfigError(f"switch_step must be >= 1, got {self.switch_step}")
        if self.warmup_end_step > self.switch_step:
            raise InvalidConfigError(
                f"warmup_end_step {self.warmup_end_step} exceeds switch_step {self.switch_step}"
            )
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise InvalidConfigError("lambda1 and lambda2 must be nonnegative")


def lambda_at(schedule: LambdaSchedule, step: int) -> float:
    if step < schedule.warmup_end_step:
        return 0.0
    if step < schedule.switch_step:
        return schedule.lambda1
    return schedule.lambda2


@dataclass(frozen=True)
class PhasePlan:
    """Feature-extractor freeze window at the start of training."""

    freeze_end_step: int
    total_steps: int

    def __post_init__(self):
        if self.freeze_end_step < 0:
            raise InvalidConfigError(f"freeze_end_step must be >= 0, got {self.freeze_end_step}")
        if self.total_steps < 1:
            raise InvalidConfigError(f"total_steps must be >= 1, got {self.total_steps}")
        if self.freeze_end_step > self.total_steps:
            raise InvalidConfigError(
                f"freeze_end_step {self.freeze_end_step} exceeds total_steps {self.total_steps}"
            )


def is_frozen(plan: PhasePlan, step: int) -> bool:
    """True while the feature extractor is frozen; the interval is half-open [0, end)."""
    return step < plan.freeze_end_step
