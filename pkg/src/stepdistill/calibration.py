"""Binary-search calibration of the distillation coefficient.

A probe maps a coefficient to the mean penalized-distillation share of the
total loss, r(lambda) = mean over iterations of lambda * l_distill / l_total.
calibrate_lambda bisects a bracket until the probe hits the target share.
Bisection assumes r is increasing in lambda; training dynamics do not
guarantee that, so violations between consecutive probes are recorded as
warnings instead of failing the search.
"""

import dataclasses
from dataclasses import dataclass

import numpy as np

from .data import generate_dataset, load_dataset
from .exceptions import CalibrationBracketError, InvalidInputError, InvalidRangeError
from .training import RunLog, train
from .validation import check_positive


def ratio_trace(run_log: RunLog, from_step: int, to_step: int) -> float:
    """Arithmetic mean of the logged ratio over [from_step, to_step)."""
    if from_step >= to_step:
        raise InvalidRangeError(f"empty step range [{from_step}, {to_step})")
    values = [row.ratio for row in run_log.rows if from_step <= row.step < to_step]
    if not values:
        raise InvalidRangeError(f"log does not cover [{from_step}, {to_step})")
    return float(np.mean(values))


@dataclass
class AnalyticRatioProbe:
    """Constant-loss probe with the closed form r = lam*d / (det + lam*d).

    The closed-form inverse lam = r*det / ((1-r)*d) makes this the oracle for
    testing the search itself.
    """

    det_loss: float
    distill_loss: float
    iterations: int = 1
    seed: int = 0

    def __post_init__(self):
        check_positive(self.det_loss, "det_loss")
        check_positive(self.distill_loss, "distill_loss")

    def __call__(self, lam: float) -> float:
        penalized = lam * self.distill_loss
        return penalized / (self.det_loss + penalized)

    def closed_form_lambda(self, target: float) -> float:
        return target * self.det_loss / ((1.0 - target) * self.distill_loss)


class TrainerRatioProbe:
    """Probe that replays a fixed number of toy-trainer iterations per coefficient.

    Warmup and freeze are disabled so the coefficient is active from step 0;
    the dataset is built once and shared by all probes, so r(lambda) is
    deterministic given the seed.
    """

    def __init__(self, config, iterations: int = 200, seed: int | None = None):
        if iterations < 1:
            raise InvalidInputError(f"iterations must be >= 1, got {iterations}")
        self.iterations = iterations
        self.seed = config.seed if seed is None else seed
        self._config = dataclasses.replace(
            config,
            seed=self.seed,
            total_steps=iterations,
            warmup_end_step=0,
            freeze_end_step=0,
            switch_step=max(1, iterations),
        )
        if config.dataset_file:
            self._scenes = load_dataset(config.dataset_file)
        else:
            self._scenes = generate_dataset(
                self.seed, config.dataset_count,
                (config.image_width, config.image_height),
                config.num_classes, (config.min_objects, config.max_objects),
            )

    def __call__(self, lam: float) -> float:
        cfg = dataclasses.replace(self._config, lambda1=lam, lambda2=lam)
        result = train(cfg, self._scenes)
        return ratio_trace(result.run_log, 0, self.iterations)


@dataclass(frozen=True)
class CalibrationResult:
    lambda_star: float
    achieved_ratio: float
    probes_used: int
    converged: bool
    warnings: tuple[str, ...] = ()
    trace: tuple[tuple[float, float], ...] = ()


def calibrate_lambda(probe, target: float, lo: float = 1.0, hi: float = 100.0,
                     tolerance: float = 0.02, max_probes: int = 40) -> CalibrationResult:
    """Bisect [lo, hi] until |r(lambda) - target| <= tolerance or probes run out.

    The endpoints are probed first: an endpoint already within tolerance is
    returned immediately; otherwise the target must be strictly bracketed or
    CalibrationBracketError reports both endpoint ratios. On probe exhaustion
    the best coefficient seen is returned with converged=False.
    """
    if not 0.0 < target < 1.0:
        raise InvalidInputError(f"target ratio must lie in (0, 1), got {target}")
    check_positive(lo, "lo")
    if not lo < hi:
        raise InvalidInputError(f"bracket requires lo < hi, got [{lo}, {hi}]")
    check_positive(tolerance, "tolerance")
    if max_probes < 1:
        raise InvalidInputError(f"max_probes must be >= 1, got {max_probes}")

    trace: list[tuple[float, float]] = []
    warnings: list[str] = []

    def run_probe(lam: float) -> float:
        r = float(probe(lam))
        if trace:
            prev_lam, prev_r = trace[-1]
            if (lam - prev_lam) * (r - prev_r) < 0 and abs(r - prev_r) > tolerance:
                warnings.append(
                    f"non-monotone ratio: r({prev_lam:g}) = {prev_r:.4f} "
                    f"but r({lam:g}) = {r:.4f}"
                )
        trace.append((lam, r))
        return r

    def result(lam, ratio, converged):
        return CalibrationResult(lam, ratio, len(trace), converged,
                                 tuple(warnings), tuple(trace))

    r_lo = run_probe(lo)
    if abs(r_lo - target) <= tolerance:
        return result(lo, r_lo, True)
    if len(trace) >= max_probes:
        return result(lo, r_lo, False)

    r_hi = run_probe(hi)
    if abs(r_hi - target) <= tolerance:
        return result(hi, r_hi, True)
    if not r_lo < target < r_hi:
        raise CalibrationBracketError(target, lo, r_lo, hi, r_hi)

    best_lam, best_r = (lo, r_lo) if abs(r_lo - target) < abs(r_hi - target) else (hi, r_hi)
    while len(trace) < max_probes:
        mid = 0.5 * (lo + hi)
        r_mid = run_probe(mid)
        if abs(r_mid - target) < abs(best_r - target):
            best_lam, best_r = mid, r_mid
        if abs(r_mid - target) <= tolerance:
            return result(mid, r_mid, True)
        if r_mid < target:
            lo = mid
        else:
            hi = mid
    return result(best_lam, best_r, False)
