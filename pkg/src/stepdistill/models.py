"""The tiny multi-scale student and the shared detection head.

Both are written directly in numpy with hand-derived backward passes so the
whole training objective stays finite-difference checkable. The student maps
an image to one 2D feature map per configured scale (block-average pooling,
a 3x3 convolution, tanh); the head maps each cell's 3x3 feature neighborhood
to class logits and box offsets, and the same head instance serves both the
student pyramid and the label-encoded pyramid.
"""

import numpy as np

from .exceptions import InvalidConfigError, InvalidInputError
from .pyramids import FeaturePyramid


def block_mean(image: np.ndarray, shape) -> np.ndarray:
    """Average-pool an image down to (rows, cols); dimensions must divide evenly."""
    rows, cols = shape
    h, w = image.shape
    if h % rows or w % cols:
        raise InvalidConfigError(
            f"image shape {(h, w)} is not divisible by scale shape {(rows, cols)}"
        )
    return image.reshape(rows, h // rows, cols, w // cols).mean(axis=(1, 3))


def _corr3x3(x: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """3x3 cross-correlation with zero padding ('same' output size)."""
    rows, cols = x.shape
    xp = np.pad(x, 1)
    out = np.zeros_like(x)
    for u in range(3):
        for v in range(3):
            out += kernel[u, v] * xp[u:u + rows, v:v + cols]
    return out


def _corr3x3_kernel_grad(x: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    rows, cols = x.shape
    xp = np.pad(x, 1)
    grad = np.empty((3, 3))
    for u in range(3):
        for v in range(3):
            grad[u, v] = float((grad_out * xp[u:u + rows, v:v + cols]).sum())
    return grad


class StudentModel:
    """Per-scale pooling + 3x3 conv + tanh feature extractor."""

    def __init__(self, scale_shapes, seed: int = 0, init_scale: float = 0.3):
        self.scale_shapes = [tuple(int(v) for v in s) for s in scale_shapes]
        if not self.scale_shapes:
            raise InvalidConfigError("scale_shapes must be non-empty")
        rng = np.random.default_rng(seed)
        self.params: dict[str, np.ndarray] = {}
        for p in range(len(self.scale_shapes)):
            self.params[f"conv{p}"] = init_scale * rng.standard_normal((3, 3))
            self.params[f"bias{p}"] = np.zeros(())

    @property
    def num_parameters(self) -> int:
        return sum(v.size for v in self.params.values())

    def pool(self, image: np.ndarray) -> list[np.ndarray]:
        image = np.asarray(image, dtype=np.float64)
        if image.ndim != 2:
            raise InvalidInputError(f"image must be 2D, got shape {image.shape}")
        return [block_mean(image, shape) for shape in self.scale_shapes]

    def forward_pooled(self, pooled: list[np.ndarray]):
        """Forward pass from pre-pooled maps; returns (pyramid, cache)."""
        outputs = []
        for p, x in enumerate(pooled):
            pre = _corr3x3(x, self.params[f"conv{p}"]) + self.params[f"bias{p}"]
            outputs.append(np.tanh(pre))
        pyramid = FeaturePyramid(outputs)
        return pyramid, (pooled, pyramid)

    def forward(self, image: np.ndarray):
        return self.forward_pooled(self.pool(image))

    def backward(self, cache, grad_pyramid: FeaturePyramid) -> dict[str, np.ndarray]:
        """Parameter gradients from loss partials w.r.t. the output pyramid."""
        pooled, pyramid = cache
        grads = {}
        for p, (x, k) in enumerate(zip(pooled, pyramid)):
            d_pre = grad_pyramid[p] * (1.0 - k * k)
            grads[f"conv{p}"] = _corr3x3_kernel_grad(x, d_pre)
            grads[f"bias{p}"] = np.asarray(float(d_pre.sum()))
        return grads


def neighborhoods(feature_map: np.ndarray) -> np.ndarray:
    """All 3x3 zero-padded neighborhoods, flattened to (cells, 9) row-major."""
    rows, cols = feature_map.shape
    padded = np.pad(feature_map, 1)
    windows = np.lib.stride_tricks.sliding_window_view(padded, (3, 3))
    return windows.reshape(rows * cols, 9)


def neighborhoods_backward(grad_x: np.ndarray, shape) -> np.ndarray:
    """Adjoint of neighborhoods(): scatter (cells, 9) partials back onto the map."""
    rows, cols = shape
    padded = np.zeros((rows + 2, cols + 2))
    for u in range(3):
        for v in range(3):
            padded[u:u + rows, v:v + cols] += grad_x[:, 3 * u + v].reshape(rows, cols)
    return padded[1:-1, 1:-1]


class DetectionHead:
    """Shared per-cell classifier (C classes + background) and 4-way box regressor."""

    def __init__(self, num_classes: int, seed: int = 0, init_scale: float = 0.1):
        if num_classes < 1:
            raise InvalidConfigError(f"num_classes must be >= 1, got {num_classes}")
        self.num_classes = num_classes
        rng = np.random.default_rng(seed)
        self.params = {
            "w_cls": init_scale * rng.standard_normal((num_classes + 1, 9)),
            "b_cls": np.zeros(num_classes + 1),
            "w_reg": init_scale * rng.standard_normal((4, 9)),
            "b_reg": np.zeros(4),
        }

    @property
    def num_parameters(self) -> int:
        return sum(v.size for v in self.params.values())

    def forward_scale(self, feature_map: np.ndarray):
        """Class logits (cells, C+1) and box offsets (cells, 4) for one scale."""
        x = neighborhoods(feature_map)
        logits = x @ self.params["w_cls"].T + self.params["b_cls"]
        offsets = x @ self.params["w_reg"].T + self.params["b_reg"]
        return logits, offsets, x

    def backward_scale(self, x: np.ndarray, d_logits: np.ndarray, d_offsets: np.ndarray,
                       shape, grads: dict[str, np.ndarray]) -> np.ndarray:
        """Accumulate head gradients in-place; return the feature-map gradient."""
        grads["w_cls"] += d_logits.T @ x
        grads["b_cls"] += d_logits.sum(axis=0)
        grads["w_reg"] += d_offsets.T @ x
        grads["b_reg"] += d_offsets.sum(axis=0)
        d_x = d_logits @ self.params["w_cls"] + d_offsets @ self.params["w_reg"]
        return neighborhoods_backward(d_x, shape)

    def zero_grads(self) -> dict[str, np.ndarray]:
        return {name: np.zeros_like(value) for name, value in self.params.items()}
