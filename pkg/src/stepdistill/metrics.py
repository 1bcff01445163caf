"""IoU and the COCO-style average-precision family.

Matching is greedy in descending score, class-aware, and one-to-one per
ground truth. Precision-recall curves are integrated with the 101-point
convention, and the overall AP averages IoU thresholds 0.50:0.05:0.95.
Size buckets (small/medium/large) use the 32^2 / 96^2 pixel-area thresholds
rescaled by (image_area / 640^2) so small images populate every bucket.
"""

from dataclasses import dataclass

import numpy as np

from .exceptions import InvalidBoxError, InvalidInputError
from .pyramids import LabelSet

IOU_THRESHOLDS = tuple((50 + 5 * i) / 100 for i in range(10))
SIZE_BUCKETS = ("all", "s", "m", "l")

_SMALL_AREA = 32.0 ** 2
_LARGE_AREA = 96.0 ** 2
_REFERENCE_AREA = 640.0 ** 2


@dataclass(frozen=True)
class Detection:
    """One scored box prediction on one image."""

    box: tuple[float, float, float, float]
    class_id: int
    score: float
    image_id: int

    def __post_init__(self):
        _check_box(self.box)
        if not np.isfinite(self.score):
            raise InvalidInputError(f"detection score must be finite, got {self.score}")


def _check_box(box) -> None:
    x0, y0, x1, y1 = box
    if not all(np.isfinite(v) for v in (x0, y0, x1, y1)):
        raise InvalidBoxError(f"box has non-finite coordinates: {box}")
    if x0 >= x1 or y0 >= y1:
        raise InvalidBoxError(f"box is degenerate: {box}")


def box_area(box) -> float:
    x0, y0, x1, y1 = box
    return (x1 - x0) * (y1 - y0)


def iou(a, b) -> float:
    """Intersection over union of two boxes; 0 when disjoint."""
    _check_box(a)
    _check_box(b)
    ix0 = max(a[0], b[0])
    iy0 = max(a[1], b[1])
    ix1 = min(a[2], b[2])
    iy1 = min(a[3], b[3])
    iw = ix1 - ix0
    ih = iy1 - iy0
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = box_area(a) + box_area(b) - inter
    return inter / union


def area_bucket(box, image_size) -> str:
    """Size bucket of a box, with thresholds scaled by its image's relative area."""
    w, h = image_size
    scale = (w * h) / _REFERENCE_AREA
    area = box_area(box)
    if area < _SMALL_AREA * scale:
        return "s"
    if area <= _LARGE_AREA * scale:
        return "m"
    return "l"


def _greedy_match(dets, gts, iou_threshold):
    """Greedy descending-score matching.

    Returns (order, matches): detection indices sorted by score (ties by
    index), and for each detection either the matched (image_idx, box_idx)
    ground-truth key or None. Each ground truth matches at most once; among
    candidates the highest IoU wins, ties broken by the lower box index.
    """
    order = sorted(range(len(dets)), key=lambda i: (-dets[i].score, i))
    matched_gt = set()
    matches = [None] * len(dets)
    for i in order:
        det = dets[i]
        if not 0 <= det.image_id < len(gts):
            raise InvalidInputError(f"detection image_id {det.image_id} has no ground truth entry")
        labels = gts[det.image_id]
        best_iou = 0.0
        best_key = None
        for j, (box, cls) in enumerate(zip(labels.boxes, labels.classes)):
            key = (det.image_id, j)
            if cls != det.class_id or key in matched_gt:
                continue
            overlap = iou(det.box, box)
            if overlap >= iou_threshold and overlap > best_iou:
                best_iou = overlap
                best_key = key
        if best_key is not None:
            matched_gt.add(best_key)
            matches[i] = best_key
    return order, matches


def average_precision(dets: list[Detection], gts: list[LabelSet],
                      iou_threshold: float = 0.5, size_bucket: str = "all") -> float | None:
    """101-point interpolated AP at one IoU threshold, optionally size-bucketed.

    Buckets filter ground truths and the detections matched to out-of-bucket
    ground truths; unmatched detections always count as false positives.
    Returns None (the "undefined" sentinel) when the bucket holds no ground
    truth, never a silent 0.
    """
    if size_bucket not in SIZE_BUCKETS:
        raise InvalidInputError(f"unknown size bucket {size_bucket!r}, expected one of {SIZE_BUCKETS}")

    in_bucket = {}
    for img, labels in enumerate(gts):
        for j, box in enumerate(labels.boxes):
            keep = size_bucket == "all" or area_bucket(box, labels.image_size) == size_bucket
            in_bucket[(img, j)] = keep
    num_gt = sum(in_bucket.values())
    if num_gt == 0:
        return None

    order, matches = _greedy_match(dets, gts, iou_threshold)
    flags = []  # True = TP, False = FP, in descending score order
    for i in order:
        key = matches[i]
        if key is None:
            flags.append(False)
        elif in_bucket[key]:
            flags.append(True)
        # detections matched to an out-of-bucket ground truth are ignored

    if not flags:
        return 0.0
    tp = np.cumsum(np.asarray(flags, dtype=np.float64))
    ranks = np.arange(1, len(flags) + 1, dtype=np.float64)
    precision = tp / ranks
    recall = tp / num_gt

    # Precision envelope: best precision achievable at recall >= r.
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    total = 0.0
    for i in range(101):
        r = i / 100.0
        idx = np.searchsorted(recall, r, side="left")
        if idx < len(recall):
            total += float(envelope[idx])
    return total / 101.0


@dataclass(frozen=True)
class ApReport:
    """The six headline metrics; None marks a bucket with no ground truth."""

    ap: float | None
    ap50: float | None
    ap75: float | None
    aps: float | None
    apm: float | None
    apl: float | None

    CSV_HEADER = "ap,ap50,ap75,aps,apm,apl"

    def to_csv_row(self) -> str:
        def fmt(v):
            return "undefined" if v is None else repr(v)

        return ",".join(fmt(v) for v in (self.ap, self.ap50, self.ap75,
                                         self.aps, self.apm, self.apl))


def _mean_over_thresholds(dets, gts, bucket):
    values = [average_precision(dets, gts, t, bucket) for t in IOU_THRESHOLDS]
    if values[0] is None:
        return None
    return float(np.mean(values))


def ap_report(dets: list[Detection], gts: list[LabelSet]) -> ApReport:
    """Assemble AP (mean over 0.50:0.05:0.95), AP50, AP75, and the size-bucket APs."""
    return ApReport(
        ap=_mean_over_thresholds(dets, gts, "all"),
        ap50=average_precision(dets, gts, 0.50, "all"),
        ap75=average_precision(dets, gts, 0.75, "all"),
        aps=_mean_over_thresholds(dets, gts, "s"),
        apm=_mean_over_thresholds(dets, gts, "m"),
        apl=_mean_over_thresholds(dets, gts, "l"),
    )
