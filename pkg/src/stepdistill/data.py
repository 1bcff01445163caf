"""Synthetic detection scenes and the line-oriented dataset file format.

Scenes contain axis-aligned rectangles, discs, and triangles with exact
bounding boxes, sized to populate all three area buckets of the metrics
module. Generation is fully deterministic from the seed.
"""

import math
from dataclasses import dataclass

import numpy as np

from .exceptions import InvalidConfigError, InvalidInputError
from .metrics import area_bucket
from .pyramids import LabelSet

DATASET_MAGIC = "toydata 1"

_BACKGROUND_NOISE = 0.05


@dataclass(frozen=True)
class SyntheticScene:
    """One grayscale image (H x W, values in [0, 1]) with its ground truth."""

    image: np.ndarray
    labels: LabelSet

    def __post_init__(self):
        img = np.asarray(self.image, dtype=np.float64)
        object.__setattr__(self, "image", img)
        if img.ndim != 2:
            raise InvalidInputError(f"image must be 2D, got shape {img.shape}")
        if not np.all(np.isfinite(img)) or img.min() < 0 or img.max() > 1:
            raise InvalidInputError("image values must be finite and lie in [0, 1]")
        w, h = self.labels.image_size
        if img.shape != (h, w):
            raise InvalidInputError(
                f"image shape {img.shape} does not match labels image_size {(w, h)}"
            )


def _side_ranges(image_size):
    """Object side-length range per size bucket, derived from the bucket thresholds.

    Buckets are defined on box area scaled by (image_area / 640^2); objects are
    sampled near-square so the side range follows from the square root.
    """
    w, h = image_size
    u = math.sqrt(w * h) / 640.0
    small_hi = 32.0 * u
    large_lo = 96.0 * u
    ranges = {
        "s": (2.0, 0.97 * small_hi),
        "m": (1.1 * small_hi, 0.97 * large_lo),
        "l": (1.05 * large_lo, min(2.0 * large_lo, 0.45 * min(w, h))),
    }
    for bucket, (lo, hi) in ranges.items():
        if not lo < hi:
            raise InvalidConfigError(
                f"image_size {image_size} cannot host '{bucket}' objects "
                f"(side range [{lo:.2f}, {hi:.2f}] is empty)"
            )
    if ranges["l"][1] > min(w, h):
        raise InvalidConfigError(f"image_size {image_size} too small for large objects")
    return ranges


def _pixel_centers(image_size):
    w, h = image_size
    xs = np.arange(w) + 0.5
    ys = np.arange(h) + 0.5
    return np.meshgrid(xs, ys)


def _shape_mask(kind, box, grid_x, grid_y):
    x0, y0, x1, y1 = box
    if kind == 0:  # rectangle
        return (grid_x >= x0) & (grid_x < x1) & (grid_y >= y0) & (grid_y < y1)
    if kind == 1:  # disc (ellipse inscribed in the box, so the box is exact)
        cx, cy = (x0 + x1) / 2, (y0 + y1) / 2
        rx, ry = (x1 - x0) / 2, (y1 - y0) / 2
        return ((grid_x - cx) / rx) ** 2 + ((grid_y - cy) / ry) ** 2 <= 1.0
    # triangle: base on the bottom edge, apex at the top center
    ax, ay = (x0 + x1) / 2, y0
    inside = (grid_y >= y0) & (grid_y < y1) & (grid_x >= x0) & (grid_x < x1)
    # half-plane tests against the two slanted edges
    left = (grid_x - x0) * (ay - y1) - (grid_y - y1) * (ax - x0) <= 0
    right = (grid_x - x1) * (ay - y1) - (grid_y - y1) * (ax - x1) >= 0
    return inside & left & right


def class_intensity(class_id: int, num_classes: int) -> float:
    """Deterministic per-class pixel intensity, kept inside (0, 1)."""
    return 0.35 + 0.6 * (class_id + 1) / num_classes


def generate_dataset(seed: int, count: int, image_size=(64, 64), num_classes: int = 3,
                     objects_per_image=(1, 3)) -> list[SyntheticScene]:
    """Deterministically generate scenes with shapes spanning all size buckets."""
    if count <= 0:
        raise InvalidConfigError(f"count must be positive, got {count}")
    if num_classes < 1:
        raise InvalidConfigError(f"num_classes must be >= 1, got {num_classes}")
    lo_n, hi_n = int(objects_per_image[0]), int(objects_per_image[1])
    if lo_n < 0 or hi_n < lo_n:
        raise InvalidConfigError(f"objects_per_image range {objects_per_image} is invalid")
    w, h = int(image_size[0]), int(image_size[1])
    ranges = _side_ranges((w, h))
    grid_x, grid_y = _pixel_centers((w, h))

    rng = np.random.default_rng(seed)
    scenes = []
    for _ in range(count):
        image = _BACKGROUND_NOISE * rng.uniform(size=(h, w))
        n_objects = int(rng.integers(lo_n, hi_n + 1))
        boxes = []
        classes = []
        for _ in range(n_objects):
            cls = int(rng.integers(0, num_classes))
            bucket = ("s", "m", "l")[int(rng.integers(0, 3))]
            side_lo, side_hi = ranges[bucket]
            side = rng.uniform(side_lo, side_hi)
            aspect = math.sqrt(rng.uniform(0.75, 4.0 / 3.0))
            sx = min(side * aspect, w - 1e-6)
            sy = min(side / aspect, h - 1e-6)
            x0 = rng.uniform(0.0, w - sx)
            y0 = rng.uniform(0.0, h - sy)
            box = (x0, y0, x0 + sx, y0 + sy)
            mask = _shape_mask(cls % 3, box, grid_x, grid_y)
            if not mask.any():  # tiny shape missed every pixel center
                mask = _shape_mask(0, box, grid_x, grid_y)
            np.maximum(image, mask * class_intensity(cls, num_classes), out=image)
            boxes.append(box)
            classes.append(cls)
        labels = LabelSet(tuple(boxes), tuple(classes), (w, h), num_classes)
        scenes.append(SyntheticScene(image, labels))
    return scenes


def bucket_census(scenes: list[SyntheticScene]) -> dict[str, int]:
    """Count ground-truth objects per size bucket across scenes."""
    census = {"s": 0, "m": 0, "l": 0}
    for scene in scenes:
        for box in scene.labels.boxes:
            census[area_bucket(box, scene.labels.image_size)] += 1
    return census


def save_dataset(scenes: list[SyntheticScene], path) -> None:
    """Write the line-oriented text format (see README for the grammar)."""
    if not scenes:
        raise InvalidConfigError("cannot save an empty dataset")
    num_classes = scenes[0].labels.num_classes
    lines = [DATASET_MAGIC, f"classes {num_classes}"]
    for scene in scenes:
        w, h = scene.labels.image_size
        lines.append("scene")
        lines.append(f"size {w} {h}")
        lines.append("pixels " + " ".join(repr(float(v)) for v in scene.image.ravel()))
        for box, cls in zip(scene.labels.boxes, scene.labels.classes):
            lines.append(f"object {cls} " + " ".join(repr(v) for v in box))
        lines.append("end")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_dataset(path) -> list[SyntheticScene]:
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    if not lines or lines[0] != DATASET_MAGIC:
        raise InvalidInputError(f"{path}: not a dataset file (missing '{DATASET_MAGIC}' header)")
    if len(lines) < 2 or not lines[1].startswith("classes "):
        raise InvalidInputError(f"{path}: missing 'classes' line")
    num_classes = int(lines[1].split()[1])
    try:
        return _parse_scenes(lines, num_classes, path)
    except IndexError:
        raise InvalidInputError(f"{path}: truncated dataset file")


def _parse_scenes(lines, num_classes, path):
    scenes = []
    i = 2
    while i < len(lines):
        if lines[i] == "":
            i += 1
            continue
        if lines[i] != "scene":
            raise InvalidInputError(f"{path}:{i + 1}: expected 'scene', got {lines[i]!r}")
        i += 1
        if not lines[i].startswith("size "):
            raise InvalidInputError(f"{path}:{i + 1}: expected 'size W H'")
        w, h = (int(v) for v in lines[i].split()[1:3])
        i += 1
        if not lines[i].startswith("pixels "):
            raise InvalidInputError(f"{path}:{i + 1}: expected 'pixels ...'")
        values = np.fromiter(lines[i][len("pixels "):].split(), dtype=np.float64)
        if values.size != w * h:
            raise InvalidInputError(
                f"{path}:{i + 1}: expected {w * h} pixel values, got {values.size}"
            )
        image = values.reshape(h, w)
        i += 1
        boxes = []
        classes = []
        while lines[i].startswith("object "):
            parts = lines[i].split()
            classes.append(int(parts[1]))
            boxes.append(tuple(float(v) for v in parts[2:6]))
            i += 1
        if lines[i] != "end":
            raise InvalidInputError(f"{path}:{i + 1}: expected 'end', got {lines[i]!r}")
        i += 1
        labels = LabelSet(tuple(boxes), tuple(classes), (w, h), num_classes)
        scenes.append(SyntheticScene(image, labels))
    return scenes
