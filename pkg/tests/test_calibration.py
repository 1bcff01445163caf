"""Coefficient calibration: bisection against the closed form, and ratio traces."""

import dataclasses

import numpy as np
import pytest

from stepdistill import (AnalyticRatioProbe, CalibrationBracketError, ExperimentConfig,
                         InvalidInputError, InvalidRangeError, RunLog, RunLogRow,
                         TrainerRatioProbe, calibrate_lambda, ratio_trace)

from oracles import closed_form_lambda

PROBE_CFG = dataclasses.replace(
    ExperimentConfig(),
    dataset_count=8, eval_count=0, num_classes=2, scale_shapes=((8, 8), (4, 4)),
    temperature=0.5, stop_teacher_grad=True, batch_size=4, eval_interval=1000,
)


def test_analytic_probe_matches_closed_form():
    probe = AnalyticRatioProbe(det_loss=1.0, distill_loss=0.1)
    result = calibrate_lambda(probe, target=0.45, lo=1.0, hi=100.0, tolerance=1e-4)
    want = closed_form_lambda(0.45, 1.0, 0.1)
    assert want == pytest.approx(0.45 / (0.55 * 0.1), abs=1e-12)
    assert result.converged
    assert abs(result.lambda_star - want) < 1e-3 * want
    assert abs(result.achieved_ratio - 0.45) <= 1e-4


def test_analytic_probe_random_triples():
    rng = np.random.default_rng(0)
    hits = 0
    for _ in range(50):
        det = float(rng.uniform(0.2, 5.0))
        dist = float(rng.uniform(0.01, 1.0))
        target = float(rng.uniform(0.05, 0.95))
        probe = AnalyticRatioProbe(det, dist)
        want = closed_form_lambda(target, det, dist)
        lo, hi = want / 50.0, want * 50.0
        result = calibrate_lambda(probe, target, lo, hi, tolerance=0.002)
        assert result.converged
        assert abs(result.achieved_ratio - target) <= 0.002
        hits += 1
    assert hits == 50


def test_target_equal_to_lower_endpoint_returns_after_one_probe():
    probe = AnalyticRatioProbe(det_loss=1.0, distill_loss=0.1)
    target = probe(2.0)
    result = calibrate_lambda(probe, target, lo=2.0, hi=50.0, tolerance=1e-9)
    assert result.lambda_star == 2.0
    assert result.probes_used == 1
    assert result.converged


def test_bracket_failure_reports_endpoint_ratios():
    probe = AnalyticRatioProbe(det_loss=1.0, distill_loss=0.1)
    with pytest.raises(CalibrationBracketError) as excinfo:
        calibrate_lambda(probe, target=0.99, lo=1.0, hi=10.0)
    err = excinfo.value
    assert err.ratio_lo == pytest.approx(probe(1.0))
    assert err.ratio_hi == pytest.approx(probe(10.0))
    assert "0.99" in str(err)


def test_probe_budget_respected_and_best_returned():
    probe = AnalyticRatioProbe(det_loss=1.0, distill_loss=0.1)
    result = calibrate_lambda(probe, target=0.45, lo=1.0, hi=100.0,
                              tolerance=1e-12, max_probes=6)
    assert result.probes_used == 6
    assert not result.converged
    # best seen is the trace entry closest to the target
    best = min(result.trace, key=lambda item: abs(item[1] - 0.45))
    assert result.lambda_star == best[0]


def test_non_monotone_probe_warns_but_continues():
    def bumpy(lam):
        if lam < 40:
            return 0.1
        if lam < 60:
            return 0.2
        if lam < 80:
            return 0.12  # dips while lambda grows
        return 0.9

    bumpy.iterations = 1
    bumpy.seed = 0
    result = calibrate_lambda(bumpy, target=0.6, lo=1.0, hi=100.0,
                              tolerance=0.02, max_probes=12)
    assert result.probes_used == 12
    assert not result.converged
    assert result.warnings  # the dip was noticed
    assert any("non-monotone" in w for w in result.warnings)


def test_calibrate_validation():
    probe = AnalyticRatioProbe(1.0, 0.1)
    with pytest.raises(InvalidInputError):
        calibrate_lambda(probe, target=0.0)
    with pytest.raises(InvalidInputError):
        calibrate_lambda(probe, target=1.0)
    with pytest.raises(InvalidInputError):
        calibrate_lambda(probe, target=0.4, lo=5.0, hi=2.0)
    with pytest.raises(InvalidInputError):
        calibrate_lambda(probe, target=0.4, tolerance=0.0)


def test_trainer_probe_deterministic_and_in_unit_interval():
    probe = TrainerRatioProbe(PROBE_CFG, iterations=20)
    r1 = probe(10.0)
    r2 = probe(10.0)
    assert r1 == r2
    assert 0.0 < r1 < 1.0


def test_ratio_trace_fixtures():
    log = RunLog()
    log.append(RunLogRow(0, 0.1, 1.0, 1.0, 0.1, 0.44, 0.0))
    log.append(RunLogRow(1, 0.1, 1.0, 1.0, 0.1, 0.44, 0.0))
    assert ratio_trace(log, 0, 2) == pytest.approx(0.44, abs=1e-15)

    log2 = RunLog()
    log2.append(RunLogRow(0, 0.1, 1.0, 1.0, 0.1, 0.4, 0.0))
    log2.append(RunLogRow(1, 0.1, 1.0, 1.0, 0.1, 0.5, 0.0))
    assert ratio_trace(log2, 0, 2) == pytest.approx(0.45, abs=1e-15)
    assert ratio_trace(log2, 1, 2) == pytest.approx(0.5, abs=1e-15)

    with pytest.raises(InvalidRangeError):
        ratio_trace(log2, 2, 2)
    with pytest.raises(InvalidRangeError):
        ratio_trace(log2, 5, 9)
