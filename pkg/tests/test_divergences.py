"""Divergences, distillation losses, and their gradients."""

import math

import numpy as np
import pytest

from stepdistill import (FeaturePyramid, InvalidInputError, ShapeMismatchError,
                         distill_loss, js_distance, js_distill_loss, js_divergence,
                         kl_distill_loss, kl_divergence, loss_gradient_check,
                         mse_distill_loss, normalize)

from helpers import random_distribution, random_pyramid_pair
from oracles import oracle_js_bits, oracle_kl_bits, oracle_softmax

# frozen 50-digit mpmath evaluations of the definitions
KL_HALF_VS_QUARTER = 0.20751874963942190927
JS_HALF_VS_NINETY = 0.1467931024360520076
SOFTMAX_ONE_ZERO = (0.73105857863000487925, 0.26894142136999512075)


# ---------------------------------------------------------------------------
# normalize

def test_normalize_constant_map_is_uniform():
    for shape in ((1, 4), (3, 3), (2, 5)):
        out = normalize(np.full(shape, 2.7))
        assert np.allclose(out, 1.0 / out.size, atol=1e-15)


def test_normalize_two_zeros():
    assert np.allclose(normalize([[0.0, 0.0]]), [[0.5, 0.5]], atol=1e-15)


def test_normalize_one_zero_matches_closed_form():
    out = normalize([[1.0, 0.0]])
    assert abs(out[0, 0] - SOFTMAX_ONE_ZERO[0]) < 1e-15
    assert abs(out[0, 1] - SOFTMAX_ONE_ZERO[1]) < 1e-15


def test_normalize_sums_to_one_and_positive():
    rng = np.random.default_rng(1)
    for _ in range(20):
        out = normalize(rng.standard_normal((5, 7)) * 10, temperature=rng.uniform(0.1, 5))
        assert abs(out.sum() - 1.0) <= 1e-9
        assert (out > 0).all()


def test_normalize_shift_invariance():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((4, 4))
    assert np.allclose(normalize(x), normalize(x + 123.0), atol=1e-12)


def test_normalize_survives_large_values():
    out = normalize([[1e4, 0.0]])
    assert np.isfinite(out).all()
    assert abs(out.sum() - 1.0) <= 1e-9


def test_normalize_rejects_bad_inputs():
    with pytest.raises(InvalidInputError):
        normalize([[np.nan, 0.0]])
    with pytest.raises(InvalidInputError):
        normalize([[1.0, 2.0]], temperature=0.0)
    with pytest.raises(InvalidInputError):
        normalize([[1.0, 2.0]], temperature=-1.0)


def test_normalize_matches_high_precision_oracle():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((3, 4)) * 3
    got = normalize(x, temperature=0.7).ravel()
    want = oracle_softmax(x, temperature=0.7)
    assert np.allclose(got, want, atol=1e-14)


# ---------------------------------------------------------------------------
# kl / js / js_distance

def test_kl_zero_on_identical():
    rng = np.random.default_rng(4)
    for _ in range(10):
        o = random_distribution(rng, (3, 5))
        assert kl_divergence(o, o) < 1e-12


def test_kl_fixture():
    got = kl_divergence([[0.5, 0.5]], [[0.25, 0.75]])
    assert abs(got - KL_HALF_VS_QUARTER) < 1e-12


def test_kl_zero_term_convention():
    assert kl_divergence([[1.0, 0.0]], [[0.5, 0.5]]) == pytest.approx(1.0, abs=1e-12)


def test_kl_nonnegative_gibbs():
    rng = np.random.default_rng(5)
    for _ in range(200):
        shape = (int(rng.integers(1, 6)), int(rng.integers(1, 6)))
        o = random_distribution(rng, shape)
        q = random_distribution(rng, shape)
        assert kl_divergence(o, q) >= -1e-12


def test_kl_positive_on_distinct():
    rng = np.random.default_rng(6)
    for _ in range(50):
        o = random_distribution(rng, (2, 3))
        q = random_distribution(rng, (2, 3))
        if np.abs(o - q).max() > 1e-4:
            assert kl_divergence(o, q) > 1e-9


def test_kl_shape_mismatch():
    with pytest.raises(ShapeMismatchError):
        kl_divergence([[0.5, 0.5]], [[0.25, 0.25, 0.5]])


def test_kl_rejects_non_distributions():
    with pytest.raises(InvalidInputError):
        kl_divergence([[0.5, 0.6]], [[0.5, 0.5]])  # does not sum to 1
    with pytest.raises(InvalidInputError):
        kl_divergence([[-0.5, 1.5]], [[0.5, 0.5]])  # negative mass


def test_js_identity_and_disjoint():
    assert js_divergence([[0.3, 0.7]], [[0.3, 0.7]]) < 1e-12
    assert js_divergence([[1.0, 0.0]], [[0.0, 1.0]]) == pytest.approx(1.0, abs=1e-15)


def test_js_fixture_matches_oracle():
    got = js_divergence([[0.5, 0.5]], [[0.9, 0.1]])
    assert abs(got - JS_HALF_VS_NINETY) < 1e-12


def test_js_random_pairs_match_oracle():
    rng = np.random.default_rng(7)
    for _ in range(50):
        shape = (int(rng.integers(1, 5)), int(rng.integers(1, 5)))
        o = random_distribution(rng, shape)
        q = random_distribution(rng, shape)
        assert abs(js_divergence(o, q) - oracle_js_bits(o, q)) < 1e-12


def test_js_symmetric_and_bounded():
    rng = np.random.default_rng(8)
    for _ in range(300):
        shape = (int(rng.integers(1, 6)), int(rng.integers(1, 6)))
        o = random_distribution(rng, shape)
        q = random_distribution(rng, shape)
        d = js_divergence(o, q)
        assert js_divergence(q, o) == d  # symmetric by construction
        assert -1e-15 <= d <= 1.0 + 1e-12


def test_js_distance_values():
    assert js_distance([[0.4, 0.6]], [[0.4, 0.6]]) == 0.0
    assert js_distance([[1.0, 0.0]], [[0.0, 1.0]]) == pytest.approx(1.0, abs=1e-15)
    rng = np.random.default_rng(9)
    o = random_distribution(rng, (2, 2))
    q = random_distribution(rng, (2, 2))
    assert abs(js_distance(o, q) - math.sqrt(oracle_js_bits(o, q))) < 1e-12


def test_js_distance_triangle_inequality():
    rng = np.random.default_rng(10)
    for _ in range(300):
        shape = (int(rng.integers(1, 5)), int(rng.integers(1, 5)))
        a = random_distribution(rng, shape)
        b = random_distribution(rng, shape)
        c = random_distribution(rng, shape)
        assert js_distance(a, c) <= js_distance(a, b) + js_distance(b, c) + 1e-9


# ---------------------------------------------------------------------------
# distillation losses

def test_mse_loss_fixtures():
    k = FeaturePyramid([[[0.0]]])
    ke = FeaturePyramid([[[2.0]]])
    assert mse_distill_loss(k, ke).value == pytest.approx(4.0, abs=1e-15)

    k2 = FeaturePyramid([[[1.0, 3.0]], [[0.0]]])
    ke2 = FeaturePyramid([[[1.0, 1.0]], [[3.0]]])
    assert mse_distill_loss(k2, ke2).value == pytest.approx(13.0 / 3.0, abs=1e-12)


def test_losses_vanish_on_identical_pyramids():
    k, _ = random_pyramid_pair(11)
    same = k.copy()
    assert mse_distill_loss(k, same).value == 0.0
    assert kl_distill_loss(k, same).value < 1e-12
    assert js_distill_loss(k, same).value < 1e-12


def test_kl_distill_constant_maps_normalize_to_uniform():
    k = FeaturePyramid([np.full((3, 3), 5.0)])
    ke = FeaturePyramid([np.full((3, 3), -2.0)])
    assert kl_distill_loss(k, ke).value < 1e-12


def test_kl_distill_matches_composed_oracle():
    k, ke = random_pyramid_pair(12, max_side=6)
    n = k.num_elements
    want = sum(oracle_kl_bits(oracle_softmax(a), oracle_softmax(b))
               for a, b in zip(k, ke)) / n
    assert abs(kl_distill_loss(k, ke).value - want) < 1e-12


def test_js_distill_matches_composed_oracle():
    k, ke = random_pyramid_pair(13, max_side=6)
    n = k.num_elements
    want = sum(math.sqrt(oracle_js_bits(oracle_softmax(a), oracle_softmax(b)))
               for a, b in zip(k, ke)) / n
    assert abs(js_distill_loss(k, ke).value - want) < 1e-12


def test_js_distill_symmetric():
    for seed in range(5):
        k, ke = random_pyramid_pair(seed)
        assert js_distill_loss(k, ke).value == js_distill_loss(ke, k).value


def test_distill_losses_permutation_invariant():
    k, ke = random_pyramid_pair(14)
    rng = np.random.default_rng(15)
    order = rng.permutation(len(k))
    perms = [rng.permutation(k[p].size) for p in range(len(k))]

    def permute(pyr):
        scales = []
        for p in order:
            flat = pyr[p].ravel()[perms[p]]
            scales.append(flat.reshape(1, -1))
        return FeaturePyramid(scales)

    pk, pke = permute(k), permute(ke)
    assert mse_distill_loss(pk, pke).value == pytest.approx(
        mse_distill_loss(k, ke).value, rel=1e-12)
    assert kl_distill_loss(pk, pke).value == pytest.approx(
        kl_distill_loss(k, ke).value, rel=1e-12)
    assert js_distill_loss(pk, pke).value == pytest.approx(
        js_distill_loss(k, ke).value, rel=1e-12)


def test_loss_shape_mismatch():
    k = FeaturePyramid([np.zeros((2, 2))])
    ke = FeaturePyramid([np.zeros((2, 3))])
    for fn in (mse_distill_loss, kl_distill_loss, js_distill_loss):
        with pytest.raises(ShapeMismatchError):
            fn(k, ke)


def test_distill_loss_unknown_id():
    k, ke = random_pyramid_pair(16)
    with pytest.raises(InvalidInputError):
        distill_loss("wasserstein", k, ke)


def test_gradient_shapes_match_inputs():
    k, ke = random_pyramid_pair(17)
    for fn in (mse_distill_loss, kl_distill_loss, js_distill_loss):
        result = fn(k, ke, with_gradients=True) if fn is mse_distill_loss else \
            fn(k, ke, 1.0, with_gradients=True)
        assert result.gradient_wrt_first.shapes == k.shapes
        assert result.gradient_wrt_second.shapes == ke.shapes


def test_js_gradient_zero_at_minimum():
    k, _ = random_pyramid_pair(18)
    result = js_distill_loss(k, k.copy(), with_gradients=True)
    for g in result.gradient_wrt_first:
        assert np.all(g == 0.0)


# ---------------------------------------------------------------------------
# gradient checks

def test_gradient_check_mse_exact():
    k, ke = random_pyramid_pair(19)
    assert loss_gradient_check("mse", k, ke, 1e-3) < 1e-6


def test_gradient_check_kl_and_js():
    for seed in (20, 21, 22):
        k, ke = random_pyramid_pair(seed, max_side=8)
        assert loss_gradient_check("kl", k, ke, 1e-4) < 1e-4
        assert loss_gradient_check("js", k, ke, 1e-4) < 1e-4


def test_gradient_wrt_second_argument():
    # finite differences on ke confirm gradient_wrt_second for every loss
    k, ke = random_pyramid_pair(23, max_side=5, max_scales=2)
    eps = 1e-5
    for loss_id in ("mse", "kl", "js"):
        analytic = distill_loss(loss_id, k, ke, with_gradients=True).gradient_wrt_second
        for p in range(len(ke)):
            rows, cols = ke[p].shape
            for r in range(rows):
                for c in range(cols):
                    scales = [s.copy() for s in ke]
                    scales[p][r, c] += eps
                    f_plus = distill_loss(loss_id, k, FeaturePyramid(scales)).value
                    scales[p][r, c] -= 2 * eps
                    f_minus = distill_loss(loss_id, k, FeaturePyramid(scales)).value
                    fd = (f_plus - f_minus) / (2 * eps)
                    a = analytic[p][r, c]
                    assert abs(a - fd) / max(abs(a), abs(fd), 1e-8) < 1e-4


def test_gradient_check_epsilon_validation():
    k, ke = random_pyramid_pair(24)
    with pytest.raises(InvalidInputError):
        loss_gradient_check("mse", k, ke, 1e-2)
    with pytest.raises(InvalidInputError):
        loss_gradient_check("mse", k, ke, 1e-7)
