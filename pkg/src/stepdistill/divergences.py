"""Divergences and distillation losses over feature pyramids, with analytic gradients.

All divergences use logarithm base 2, which makes the Jensen-Shannon
divergence land exactly in [0, 1]. Feature maps become probability grids via
a flattened per-scale softmax with configurable temperature, so every loss
here is smooth in the raw features.
"""

import math
from dataclasses import dataclass

import numpy as np

from .exceptions import InvalidInputError
from .pyramids import FeaturePyramid, check_same_pyramid_shape
from .validation import as_distribution, as_feature_map, check_positive, check_same_shape

# Floor applied to denominators inside KL so user-supplied zero entries never
# divide; softmax outputs are strictly positive and are unaffected.
_TINY = 1e-12
_LN2 = math.log(2.0)

LOSS_IDS = ("mse", "kl", "js")


@dataclass
class LossValue:
    """A scalar loss plus optional partials w.r.t. each input pyramid."""

    value: float
    gradient_wrt_first: FeaturePyramid | None = None
    gradient_wrt_second: FeaturePyramid | None = None


def normalize(scale_map, temperature: float = 1.0) -> np.ndarray:
    """Softmax over the flattened map: exp(x/T) normalized to total mass 1.

    Max-subtraction keeps the exponentials bounded regardless of input scale.
    """
    x = as_feature_map(scale_map, "scale map")
    temperature = check_positive(temperature, "temperature")
    z = (x - x.max()) / temperature
    e = np.exp(z)
    return e / e.sum()


def _kl2(p: np.ndarray, q: np.ndarray) -> float:
    """Base-2 KL with the 0*log(0/q) = 0 convention and a floored denominator."""
    mask = p > 0
    pm = p[mask]
    qm = np.maximum(q[mask], _TINY)
    return float(np.sum(pm * (np.log2(pm) - np.log2(qm))))


def kl_divergence(o, q) -> float:
    """D_KL(o || q) in bits. Nonnegative; zero iff the inputs coincide."""
    o = as_distribution(o, "o")
    q = as_distribution(q, "q")
    check_same_shape(o, q, "distributions")
    return _kl2(o, q)


def js_divergence(o, q) -> float:
    """Jensen-Shannon divergence in bits: bounded by [0, 1] and symmetric."""
    o = as_distribution(o, "o")
    q = as_distribution(q, "q")
    check_same_shape(o, q, "distributions")
    m = 0.5 * (o + q)
    return 0.5 * _kl2(o, m) + 0.5 * _kl2(q, m)


def js_distance(o, q) -> float:
    """Square root of the JS divergence; a metric on distributions."""
    return math.sqrt(max(js_divergence(o, q), 0.0))


def mse_distill_loss(k: FeaturePyramid, ke: FeaturePyramid,
                     with_gradients: bool = False) -> LossValue:
    """Sum of squared elementwise differences over all scales, divided by N."""
    check_same_pyramid_shape(k, ke)
    n = k.num_elements
    total = 0.0
    for a, b in zip(k, ke):
        d = a - b
        total += float((d * d).sum())
    value = total / n
    if not with_gradients:
        return LossValue(value)
    grad_k = FeaturePyramid([2.0 * (a - b) / n for a, b in zip(k, ke)])
    grad_ke = FeaturePyramid([-2.0 * (a - b) / n for a, b in zip(k, ke)])
    return LossValue(value, grad_k, grad_ke)


def _softmax(x: np.ndarray, temperature: float) -> np.ndarray:
    z = (x - x.max()) / temperature
    e = np.exp(z)
    return e / e.sum()


def kl_distill_loss(k: FeaturePyramid, ke: FeaturePyramid, temperature: float = 1.0,
                    with_gradients: bool = False) -> LossValue:
    """Per-scale KL between softmax-normalized maps, summed over scales, divided by N."""
    check_same_pyramid_shape(k, ke)
    temperature = check_positive(temperature, "temperature")
    n = k.num_elements
    total = 0.0
    grads_k = []
    grads_ke = []
    for x, y in zip(k, ke):
        o = _softmax(x, temperature)
        q = _softmax(y, temperature)
        kl = _kl2(o, q)
        total += kl
        if with_gradients:
            # d KL / dx through the softmax: (o/T) * (log2(o/q) - KL)
            log_ratio = np.log2(np.maximum(o, _TINY)) - np.log2(np.maximum(q, _TINY))
            grads_k.append(o / temperature * (log_ratio - kl) / n)
            grads_ke.append((q - o) / (temperature * _LN2) / n)
    value = total / n
    if not with_gradients:
        return LossValue(value)
    return LossValue(value, FeaturePyramid(grads_k), FeaturePyramid(grads_ke))


def js_distill_loss(k: FeaturePyramid, ke: FeaturePyramid, temperature: float = 1.0,
                    with_gradients: bool = False) -> LossValue:
    """Per-scale JS distance of softmax-normalized maps, summed over scales, divided by N.

    Symmetric in (k, ke). The sqrt gradient at D_JS = 0 is taken to be 0: the
    loss minimum sits exactly there, so the zero subgradient is stable.
    """
    check_same_pyramid_shape(k, ke)
    temperature = check_positive(temperature, "temperature")
    n = k.num_elements
    total = 0.0
    grads_k = []
    grads_ke = []
    for x, y in zip(k, ke):
        o = _softmax(x, temperature)
        q = _softmax(y, temperature)
        m = 0.5 * (o + q)
        d_js = 0.5 * _kl2(o, m) + 0.5 * _kl2(q, m)
        dist = math.sqrt(max(d_js, 0.0))
        total += dist
        if with_gradients:
            if dist > 0.0:
                log_m = np.log2(np.maximum(m, _TINY))
                h_o = 0.5 * (np.log2(np.maximum(o, _TINY)) - log_m)
                h_q = 0.5 * (np.log2(np.maximum(q, _TINY)) - log_m)
                dd_dx = o / temperature * (h_o - float((o * h_o).sum()))
                dd_dy = q / temperature * (h_q - float((q * h_q).sum()))
                scale = 1.0 / (2.0 * dist * n)
                grads_k.append(dd_dx * scale)
                grads_ke.append(dd_dy * scale)
            else:
                grads_k.append(np.zeros_like(o))
                grads_ke.append(np.zeros_like(q))
    value = total / n
    if not with_gradients:
        return LossValue(value)
    return LossValue(value, FeaturePyramid(grads_k), FeaturePyramid(grads_ke))


def distill_loss(loss_id: str, k: FeaturePyramid, ke: FeaturePyramid,
                 temperature: float = 1.0, with_gradients: bool = False) -> LossValue:
    """Dispatch by loss id: mse, kl, or js."""
    if loss_id == "mse":
        return mse_distill_loss(k, ke, with_gradients)
    if loss_id == "kl":
        return kl_distill_loss(k, ke, temperature, with_gradients)
    if loss_id == "js":
        return js_distill_loss(k, ke, temperature, with_gradients)
    raise InvalidInputError(f"unknown loss id {loss_id!r}, expected one of {LOSS_IDS}")


def loss_gradient_check(loss_id: str, k: FeaturePyramid, ke: FeaturePyramid,
                        epsilon: float = 1e-4, temperature: float = 1.0,
                        return_location: bool = False):
    """Max relative error between analytic and central finite-difference gradients.

    Perturbs every element of k; the relative error denominator is
    max(|analytic|, |fd|, 1e-8). With return_location=True also returns the
    (scale, row, col) of the worst element.
    """
    if not 1e-6 <= epsilon <= 1e-3:
        raise InvalidInputError(f"epsilon must lie in [1e-6, 1e-3], got {epsilon}")
    analytic = distill_loss(loss_id, k, ke, temperature, with_gradients=True).gradient_wrt_first

    def value_at(scales):
        return distill_loss(loss_id, FeaturePyramid(scales), ke, temperature).value

    worst = 0.0
    worst_at = (0, 0, 0)
    scales = [s.copy() for s in k]
    for p, s in enumerate(scales):
        rows, cols = s.shape
        for r in range(rows):
            for c in range(cols):
                orig = s[r, c]
                s[r, c] = orig + epsilon
                f_plus = value_at(scales)
                s[r, c] = orig - epsilon
                f_minus = value_at(scales)
                s[r, c] = orig
                fd = (f_plus - f_minus) / (2.0 * epsilon)
                a = analytic[p][r, c]
                err = abs(a - fd) / max(abs(a), abs(fd), 1e-8)
                if err > worst:
                    worst = err
                    worst_at = (p, r, c)
    if return_location:
        return worst, worst_at
    return worst
