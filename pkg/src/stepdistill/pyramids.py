"""Feature pyramids, ground-truth label sets, and the synthetic label encoder.

The label encoder plays the teacher-forming role: it rasterizes ground-truth
boxes onto every pyramid scale and applies a tiny learnable per-scale
transform, producing the label-enhanced pyramid that both the distillation
loss and the shared detection head consume.
"""

import math
from dataclasses import dataclass

import numpy as np

from .exceptions import InvalidConfigError, InvalidInputError
from .validation import as_feature_map


class FeaturePyramid:
    """Ordered stack of single-channel 2D feature maps at decreasing resolution."""

    __slots__ = ("scales",)

    def __init__(self, scales):
        scales = list(scales)
        if not scales:
            raise InvalidInputError("pyramid must have at least one scale")
        self.scales = [as_feature_map(s, f"scale {p}") for p, s in enumerate(scales)]

    @property
    def shapes(self) -> list[tuple[int, int]]:
        return [s.shape for s in self.scales]

    @property
    def num_elements(self) -> int:
        """Total element count across scales (the normalizer of the distillation losses)."""
        return sum(s.size for s in self.scales)

    def __len__(self) -> int:
        return len(self.scales)

    def __iter__(self):
        return iter(self.scales)

    def __getitem__(self, p):
        return self.scales[p]

    def copy(self) -> "FeaturePyramid":
        return FeaturePyramid([s.copy() for s in self.scales])

    def zeros_like(self) -> "FeaturePyramid":
        return FeaturePyramid([np.zeros_like(s) for s in self.scales])

    def __repr__(self) -> str:
        dims = ", ".join(f"{r}x{c}" for r, c in self.shapes)
        return f"FeaturePyramid([{dims}])"


def check_same_pyramid_shape(a: FeaturePyramid, b: FeaturePyramid) -> None:
    from .exceptions import ShapeMismatchError

    if a.shapes != b.shapes:
        raise ShapeMismatchError(f"pyramids have mismatched shapes {a.shapes} vs {b.shapes}")


@dataclass(frozen=True)
class LabelSet:
    """Ground-truth boxes and class ids for one image.

    Boxes are (x_min, y_min, x_max, y_max) in image pixels; class ids lie in
    [0, num_classes). image_size is (width, height).
    """

    boxes: tuple[tuple[float, float, float, float], ...]
    classes: tuple[int, ...]
    image_size: tuple[int, int]
    num_classes: int

    def __post_init__(self):
        object.__setattr__(self, "boxes", tuple(tuple(float(v) for v in b) for b in self.boxes))
        object.__setattr__(self, "classes", tuple(int(c) for c in self.classes))
        object.__setattr__(self, "image_size", (int(self.image_size[0]), int(self.image_size[1])))
        if len(self.boxes) != len(self.classes):
            raise InvalidInputError(
                f"{len(self.boxes)} boxes but {len(self.classes)} class ids"
            )
        if self.num_classes < 1:
            raise InvalidInputError(f"num_classes must be >= 1, got {self.num_classes}")
        w, h = self.image_size
        if w <= 0 or h <= 0:
            raise InvalidInputError(f"image_size must be positive, got {self.image_size}")
        for i, (x0, y0, x1, y1) in enumerate(self.boxes):
            if not (x0 < x1 and y0 < y1):
                raise InvalidInputError(f"box {i} is degenerate: {(x0, y0, x1, y1)}")
            if x0 < 0 or y0 < 0 or x1 > w or y1 > h:
                raise InvalidInputError(f"box {i} exceeds image bounds {self.image_size}")
        for i, c in enumerate(self.classes):
            if not 0 <= c < self.num_classes:
                raise InvalidInputError(f"class id {c} at index {i} outside [0, {self.num_classes})")

    def __len__(self) -> int:
        return len(self.boxes)


@dataclass
class LabelEncoderParams:
    """Per-scale affine transform plus per-scale mixing weights, all learnable."""

    gain: np.ndarray
    bias: np.ndarray
    mix: np.ndarray

    @classmethod
    def identity(cls, num_scales: int) -> "LabelEncoderParams":
        return cls(
            gain=np.ones(num_scales),
            bias=np.zeros(num_scales),
            mix=np.ones(num_scales),
        )

    def __post_init__(self):
        self.gain = np.asarray(self.gain, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        self.mix = np.asarray(self.mix, dtype=np.float64)
        n = self.gain.shape
        if self.bias.shape != n or self.mix.shape != n:
            raise InvalidInputError("gain, bias, and mix must have identical lengths")
        for name, arr in (("gain", self.gain), ("bias", self.bias), ("mix", self.mix)):
            if not np.all(np.isfinite(arr)):
                raise InvalidInputError(f"encoder {name} contains non-finite values")

    @property
    def num_scales(self) -> int:
        return self.gain.size

    def copy(self) -> "LabelEncoderParams":
        return LabelEncoderParams(self.gain.copy(), self.bias.copy(), self.mix.copy())


def _box_to_cells(box, image_size, shape):
    """Grid cell span covered by a box: floor for start, ceil for end.

    Guarantees at least one covered cell per axis for any non-degenerate box.
    """
    x0, y0, x1, y1 = box
    w, h = image_size
    rows, cols = shape
    c0 = max(0, math.floor(x0 * cols / w))
    c1 = min(cols, math.ceil(x1 * cols / w))
    r0 = max(0, math.floor(y0 * rows / h))
    r1 = min(rows, math.ceil(y1 * rows / h))
    return r0, r1, c0, c1


def render_labels(labels: LabelSet, scale_shapes) -> FeaturePyramid:
    """Rasterize ground-truth boxes onto each scale.

    Each box paints intensity (class_id + 1) / num_classes over the cells it
    covers; overlapping boxes keep the maximum; background stays 0.
    """
    scale_shapes = list(scale_shapes)
    if not scale_shapes:
        raise InvalidConfigError("scale_shapes must be non-empty")
    maps = []
    for shape in scale_shapes:
        rows, cols = int(shape[0]), int(shape[1])
        if rows <= 0 or cols <= 0:
            raise InvalidConfigError(f"scale shape {shape} must be positive")
        grid = np.zeros((rows, cols))
        for box, cls in zip(labels.boxes, labels.classes):
            r0, r1, c0, c1 = _box_to_cells(box, labels.image_size, (rows, cols))
            intensity = (cls + 1) / labels.num_classes
            region = grid[r0:r1, c0:c1]
            np.maximum(region, intensity, out=region)
        maps.append(grid)
    return FeaturePyramid(maps)


def encode_labels(labels: LabelSet, params: LabelEncoderParams, scale_shapes) -> FeaturePyramid:
    """Rasterize labels and apply the learnable transform: mix_p * (gain_p * x + bias_p)."""
    return encode_labels_with_cache(labels, params, scale_shapes)[0]


def encode_labels_with_cache(labels, params, scale_shapes):
    """Like encode_labels but also returns the rendered base needed for gradients."""
    scale_shapes = list(scale_shapes)
    if params.num_scales != len(scale_shapes):
        raise InvalidInputError(
            f"encoder has {params.num_scales} scales but {len(scale_shapes)} shapes given"
        )
    base = render_labels(labels, scale_shapes)
    return encode_rendered(base, params), base


def encode_rendered(base: FeaturePyramid, params: LabelEncoderParams) -> FeaturePyramid:
    """Apply the learnable transform to an already-rendered pyramid."""
    if params.num_scales != len(base):
        raise InvalidInputError(
            f"encoder has {params.num_scales} scales but the pyramid has {len(base)}"
        )
    return FeaturePyramid([params.mix[p] * (params.gain[p] * x + params.bias[p])
                           for p, x in enumerate(base)])


def encoder_backward(params: LabelEncoderParams, base: FeaturePyramid,
                     grad_out: FeaturePyramid) -> LabelEncoderParams:
    """Gradients of a scalar loss w.r.t. the encoder parameters.

    base is the rendered pyramid cached by encode_labels_with_cache; grad_out
    holds the loss partials w.r.t. the encoded pyramid.
    """
    n = params.num_scales
    d_gain = np.zeros(n)
    d_bias = np.zeros(n)
    d_mix = np.zeros(n)
    for p in range(n):
        g = grad_out[p]
        x = base[p]
        d_gain[p] = params.mix[p] * float((g * x).sum())
        d_bias[p] = params.mix[p] * float(g.sum())
        d_mix[p] = float((g * (params.gain[p] * x + params.bias[p])).sum())
    return LabelEncoderParams(d_gain, d_bias, d_mix)


@dataclass(frozen=True)
class ScaleStats:
    shape: tuple[int, int]
    count: int
    minimum: float
    maximum: float
    mean: float


@dataclass(frozen=True)
class PyramidStats:
    per_scale: tuple[ScaleStats, ...]
    total_elements: int


def pyramid_stats(k: FeaturePyramid) -> PyramidStats:
    """Per-scale min/max/mean/count plus the total element count N."""
    per_scale = tuple(
        ScaleStats(
            shape=s.shape,
            count=s.size,
            minimum=float(s.min()),
            maximum=float(s.max()),
            mean=float(s.mean()),
        )
        for s in k
    )
    return PyramidStats(per_scale=per_scale, total_elements=k.num_elements)
