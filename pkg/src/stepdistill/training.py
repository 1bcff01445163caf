"""End-to-end desk-scale self-distillation training.

One step: the student maps a batch of images to feature pyramids (K), the
label encoder produces label-enhanced pyramids (K_e), the shared head scores
both, and plain SGD follows

    l_total = l_det(K) + l_det(K_e) + lambda * l_distill(K, K_e)

with the learning rate, the coefficient lambda, and the backbone freeze all
driven by their schedules. Everything is deterministic given the seed.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .data import SyntheticScene
from .divergences import distill_loss
from .exceptions import DivergedError, InvalidConfigError, InvalidInputError
from .metrics import Detection, ApReport, ap_report, iou
from .models import DetectionHead, StudentModel
from .pyramids import (FeaturePyramid, LabelEncoderParams, LabelSet,
                       encode_rendered, encoder_backward, render_labels)
from .schedules import LambdaSchedule, LrSchedule, PhasePlan, is_frozen, lambda_at, lr_at

_LN2 = math.log(2.0)

RUNLOG_HEADER = "step,lr,lambda,l_det,l_distill,ratio,ap_surrogate"


@dataclass(frozen=True)
class RunLogRow:
    step: int
    lr: float
    lam: float
    l_det: float
    l_distill: float
    ratio: float
    ap_surrogate: float

    def to_csv(self) -> str:
        return ",".join((str(self.step), repr(self.lr), repr(self.lam), repr(self.l_det),
                         repr(self.l_distill), repr(self.ratio), repr(self.ap_surrogate)))


class RunLog:
    """Append-only per-step record; rows strictly increasing in step."""

    def __init__(self):
        self.rows: list[RunLogRow] = []

    def append(self, row: RunLogRow) -> None:
        if self.rows and row.step <= self.rows[-1].step:
            raise InvalidInputError(
                f"log steps must increase: {row.step} after {self.rows[-1].step}"
            )
        self.rows.append(row)

    def __len__(self) -> int:
        return len(self.rows)

    def to_csv(self) -> str:
        lines = [RUNLOG_HEADER]
        lines.extend(row.to_csv() for row in self.rows)
        return "\n".join(lines) + "\n"

    @classmethod
    def from_csv(cls, text: str) -> "RunLog":
        lines = [ln for ln in text.splitlines() if ln]
        if not lines or lines[0] != RUNLOG_HEADER:
            raise InvalidInputError(f"run log header must be {RUNLOG_HEADER!r}")
        log = cls()
        for ln in lines[1:]:
            parts = ln.split(",")
            log.append(RunLogRow(int(parts[0]), *(float(v) for v in parts[1:])))
        return log


# ---------------------------------------------------------------------------
# target assignment and detection loss

@dataclass
class ScaleTargets:
    """Per-cell supervision for one pyramid scale (cells in row-major order)."""

    class_ids: np.ndarray      # (cells,) int, background = num_classes
    positive: np.ndarray       # (cells,) bool
    offsets: np.ndarray        # (cells, 4), meaningful only where positive


def assign_targets(labels: LabelSet, scale_shapes) -> list[ScaleTargets]:
    """Center-in-box assignment, identical at every scale.

    A cell is positive iff its center falls inside a ground-truth box
    (half-open on the max edges); among several boxes the smallest-area one
    wins. Offset targets are the center-to-edge distances normalized by the
    longest image side.
    """
    w, h = labels.image_size
    norm = float(max(w, h))
    out = []
    for rows, cols in scale_shapes:
        cx = (np.arange(cols) + 0.5) * (w / cols)
        cy = (np.arange(rows) + 0.5) * (h / rows)
        gx, gy = np.meshgrid(cx, cy)
        gx = gx.ravel()
        gy = gy.ravel()
        n_cells = rows * cols
        class_ids = np.full(n_cells, labels.num_classes, dtype=np.int64)
        best_area = np.full(n_cells, np.inf)
        offsets = np.zeros((n_cells, 4))
        for (x0, y0, x1, y1), cls in zip(labels.boxes, labels.classes):
            inside = (gx >= x0) & (gx < x1) & (gy >= y0) & (gy < y1)
            area = (x1 - x0) * (y1 - y0)
            take = inside & (area < best_area)
            if take.any():
                best_area[take] = area
                class_ids[take] = cls
                offsets[take, 0] = (gx[take] - x0) / norm
                offsets[take, 1] = (gy[take] - y0) / norm
                offsets[take, 2] = (x1 - gx[take]) / norm
                offsets[take, 3] = (y1 - gy[take]) / norm
        out.append(ScaleTargets(class_ids, class_ids < labels.num_classes, offsets))
    return out


@dataclass
class DetectionLossResult:
    value: float
    grad_pyramid: FeaturePyramid
    grad_head: dict[str, np.ndarray]


def detection_loss(head: DetectionHead, pyramid: FeaturePyramid, labels: LabelSet,
                   targets: list[ScaleTargets] | None = None) -> DetectionLossResult:
    """Base-2 cross-entropy over C+1 classes averaged over all cells, plus
    squared box-offset error averaged over positive cells."""
    if targets is None:
        targets = assign_targets(labels, pyramid.shapes)
    if len(targets) != len(pyramid):
        raise InvalidInputError("targets do not match the pyramid scales")

    n_cells = sum(t.class_ids.size for t in targets)
    n_pos = sum(int(t.positive.sum()) for t in targets)
    pos_norm = max(1, n_pos)

    value = 0.0
    grad_scales = []
    grad_head = head.zero_grads()
    for p, feature_map in enumerate(pyramid):
        tgt = targets[p]
        if tgt.class_ids.size != feature_map.size:
            raise InvalidInputError(
                f"scale {p} has {feature_map.size} cells but targets have {tgt.class_ids.size}"
            )
        logits, offsets, x = head.forward_scale(feature_map)

        z = logits - logits.max(axis=1, keepdims=True)
        e = np.exp(z)
        probs = e / e.sum(axis=1, keepdims=True)
        rows = np.arange(logits.shape[0])
        # an underflowed probability yields -inf here on purpose: the trainer
        # turns the non-finite loss into a DivergedError
        with np.errstate(divide="ignore"):
            value += float(-np.log2(probs[rows, tgt.class_ids]).sum()) / n_cells

        one_hot = np.zeros_like(probs)
        one_hot[rows, tgt.class_ids] = 1.0
        d_logits = (probs - one_hot) / (_LN2 * n_cells)

        d_offsets = np.zeros_like(offsets)
        if tgt.positive.any():
            diff = offsets[tgt.positive] - tgt.offsets[tgt.positive]
            value += float((diff * diff).sum()) / pos_norm
            d_offsets[tgt.positive] = 2.0 * diff / pos_norm

        grad_scales.append(head.backward_scale(x, d_logits, d_offsets,
                                               feature_map.shape, grad_head))
    return DetectionLossResult(value, FeaturePyramid(grad_scales), grad_head)


@dataclass
class TotalLossBreakdown:
    l_det: float
    l_distill: float
    l_total: float
    grad_k: FeaturePyramid
    grad_ke: FeaturePyramid
    grad_head: dict[str, np.ndarray]


def total_loss(k: FeaturePyramid, ke: FeaturePyramid, labels: LabelSet, head: DetectionHead,
               lam: float, loss_id: str, temperature: float = 1.0,
               stop_teacher_grad: bool = False,
               targets: list[ScaleTargets] | None = None) -> TotalLossBreakdown:
    """l_total = l_det(K) + l_det(K_e) + lambda * l_distill(K, K_e), with gradients.

    loss_id "none" disables distillation entirely (the no-distillation
    baseline); l_distill is then reported as 0.
    """
    if lam < 0:
        raise InvalidInputError(f"lambda must be nonnegative, got {lam}")
    if targets is None:
        targets = assign_targets(labels, k.shapes)
    det_k = detection_loss(head, k, labels, targets)
    det_ke = detection_loss(head, ke, labels, targets)
    l_det = det_k.value + det_ke.value

    grad_k = [a.copy() for a in det_k.grad_pyramid]
    grad_ke = [a.copy() for a in det_ke.grad_pyramid]
    grad_head = {name: det_k.grad_head[name] + det_ke.grad_head[name]
                 for name in det_k.grad_head}

    if loss_id == "none":
        l_distill = 0.0
    elif lam == 0.0:
        # value logged for reference; a zero coefficient must not touch updates
        l_distill = distill_loss(loss_id, k, ke, temperature).value
    else:
        distill = distill_loss(loss_id, k, ke, temperature, with_gradients=True)
        l_distill = distill.value
        for p in range(len(grad_k)):
            grad_k[p] += lam * distill.gradient_wrt_first[p]
            if not stop_teacher_grad:
                grad_ke[p] += lam * distill.gradient_wrt_second[p]

    l_total = l_det + lam * l_distill
    return TotalLossBreakdown(l_det, l_distill, l_total,
                              FeaturePyramid(grad_k), FeaturePyramid(grad_ke), grad_head)


# ---------------------------------------------------------------------------
# the training loop

@dataclass
class TrainResult:
    run_log: RunLog
    student: StudentModel
    head: DetectionHead
    encoder: LabelEncoderParams
    eval_scenes: list[SyntheticScene] = field(default_factory=list)


def _split_dataset(dataset, eval_count):
    if eval_count < 0:
        raise InvalidConfigError(f"eval_count must be >= 0, got {eval_count}")
    if eval_count >= len(dataset):
        raise InvalidConfigError(
            f"eval_count {eval_count} leaves no training scenes (dataset has {len(dataset)})"
        )
    if eval_count == 0:
        return list(dataset), []
    return list(dataset[:-eval_count]), list(dataset[-eval_count:])


def train(config, dataset: list[SyntheticScene]) -> TrainResult:
    """Run the full mini-batch SGD loop described by the config.

    Deterministic given config + seed. Raises DivergedError (carrying the
    step, the last finite row, and the partial run log) if any loss goes
    non-finite.
    """
    from .config import validate_config  # local import to avoid a cycle

    validate_config(config)
    if not dataset:
        raise InvalidConfigError("dataset must be non-empty")

    train_scenes, eval_scenes = _split_dataset(dataset, config.eval_count)
    scale_shapes = list(config.scale_shapes)
    student = StudentModel(scale_shapes, seed=config.seed)
    head = DetectionHead(config.num_classes, seed=config.seed + 1)
    encoder = LabelEncoderParams.identity(len(scale_shapes))
    run_log = RunLog()

    if config.total_steps == 0:
        return TrainResult(run_log, student, head, encoder, eval_scenes)

    lr_schedule = LrSchedule(config.base_rate, config.decay_start_step, config.decay_factor,
                             config.decay_interval, config.end_step)
    lam_schedule = LambdaSchedule(config.warmup_end_step, config.switch_step,
                                  config.lambda1, config.lambda2)
    plan = PhasePlan(config.freeze_end_step, config.total_steps)

    # per-scene caches: pooling, rasterized labels, and target assignment are
    # all independent of the parameters
    pooled = [student.pool(s.image) for s in train_scenes]
    rendered = [render_labels(s.labels, scale_shapes) for s in train_scenes]
    targets = [assign_targets(s.labels, scale_shapes) for s in train_scenes]

    batch_rng = np.random.default_rng(config.seed + 2)
    ap_surrogate = 0.0
    last_finite_row = None

    for step in range(config.total_steps):
        lr = lr_at(lr_schedule, step)
        lam = lambda_at(lam_schedule, step)
        frozen = is_frozen(plan, step)

        indices = batch_rng.integers(0, len(train_scenes), size=config.batch_size)
        student_grads = {name: np.zeros_like(v) for name, v in student.params.items()}
        head_grads = head.zero_grads()
        encoder_grads = LabelEncoderParams(np.zeros(len(scale_shapes)),
                                           np.zeros(len(scale_shapes)),
                                           np.zeros(len(scale_shapes)))
        det_sum = 0.0
        distill_sum = 0.0
        for i in indices:
            scene = train_scenes[i]
            k, cache = student.forward_pooled(pooled[i])
            base = rendered[i]
            ke = encode_rendered(base, encoder)
            breakdown = total_loss(k, ke, scene.labels, head, lam, config.loss_id,
                                   config.temperature, config.stop_teacher_grad, targets[i])
            det_sum += breakdown.l_det
            distill_sum += breakdown.l_distill

            for name, g in student.backward(cache, breakdown.grad_k).items():
                student_grads[name] += g
            for name, g in breakdown.grad_head.items():
                head_grads[name] += g
            enc_g = encoder_backward(encoder, base, breakdown.grad_ke)
            encoder_grads.gain += enc_g.gain
            encoder_grads.bias += enc_g.bias
            encoder_grads.mix += enc_g.mix

        batch = float(config.batch_size)
        l_det = det_sum / batch
        l_distill = distill_sum / batch
        l_total = l_det + lam * l_distill
        ratio = lam * l_distill / l_total if lam > 0.0 and l_total > 0.0 else 0.0

        if not (math.isfinite(l_total) and math.isfinite(ratio)):
            err = DivergedError(step, last_finite_row)
            err.run_log = run_log
            raise err

        if not frozen:
            for name in student.params:
                student.params[name] = student.params[name] - lr * student_grads[name] / batch
        for name in head.params:
            head.params[name] = head.params[name] - lr * head_grads[name] / batch
        encoder.gain = encoder.gain - lr * encoder_grads.gain / batch
        encoder.bias = encoder.bias - lr * encoder_grads.bias / batch
        encoder.mix = encoder.mix - lr * encoder_grads.mix / batch

        if eval_scenes and step % config.eval_interval == 0:
            report = evaluate(student, head, eval_scenes, config.score_threshold)
            ap_surrogate = report.ap if report.ap is not None else 0.0

        row = RunLogRow(step, lr, lam, l_det, l_distill, ratio, ap_surrogate)
        run_log.append(row)
        last_finite_row = row

    return TrainResult(run_log, student, head, encoder, eval_scenes)


# ---------------------------------------------------------------------------
# decoding and evaluation

def decode_detections(student: StudentModel, head: DetectionHead, image: np.ndarray,
                      image_size, score_threshold: float, image_id: int,
                      nms_iou: float = 0.5) -> list[Detection]:
    """Per-cell predictions -> thresholded boxes -> per-class greedy NMS."""
    w, h = image_size
    norm = float(max(w, h))
    pyramid, _ = student.forward(image)
    candidates = []
    for p, feature_map in enumerate(pyramid):
        rows, cols = feature_map.shape
        logits, offsets, _ = head.forward_scale(feature_map)
        z = logits - logits.max(axis=1, keepdims=True)
        e = np.exp(z)
        probs = e / e.sum(axis=1, keepdims=True)
        cls_probs = probs[:, :head.num_classes]
        best = np.argmax(cls_probs, axis=1)
        scores = cls_probs[np.arange(len(best)), best]
        keep = scores >= score_threshold
        if not keep.any():
            continue
        cx = (np.tile(np.arange(cols), rows) + 0.5) * (w / cols)
        cy = (np.repeat(np.arange(rows), cols) + 0.5) * (h / rows)
        for idx in np.flatnonzero(keep):
            l, t, r, b = offsets[idx] * norm
            x0 = max(0.0, cx[idx] - l)
            y0 = max(0.0, cy[idx] - t)
            x1 = min(float(w), cx[idx] + r)
            y1 = min(float(h), cy[idx] + b)
            if x0 < x1 and y0 < y1:
                candidates.append((float(scores[idx]), int(best[idx]), (x0, y0, x1, y1)))

    detections = []
    for cls in sorted({c for _, c, _ in candidates}):
        group = [(s, b) for s, c, b in candidates if c == cls]
        group.sort(key=lambda item: -item[0])
        kept = []
        for score, box in group:
            if all(iou(box, kb) <= nms_iou for _, kb in kept):
                kept.append((score, box))
        detections.extend(Detection(box, cls, score, image_id) for score, box in kept)
    return detections


def evaluate(student: StudentModel, head: DetectionHead, dataset: list[SyntheticScene],
             score_threshold: float = 0.25) -> ApReport:
    """Decode every scene and score the COCO-style AP family against ground truth."""
    detections = []
    gts = []
    for i, scene in enumerate(dataset):
        detections.extend(decode_detections(student, head, scene.image,
                                            scene.labels.image_size, score_threshold, i))
        gts.append(scene.labels)
    return ap_report(detections, gts)


# ---------------------------------------------------------------------------
# checkpoints: versioned header + named blocks of little-endian float64

CHECKPOINT_MAGIC = b"SDCKPT 1\n"


def checkpoint_blocks(student: StudentModel, head: DetectionHead,
                      encoder: LabelEncoderParams) -> dict[str, np.ndarray]:
    blocks = {f"student.{name}": value for name, value in student.params.items()}
    blocks.update({f"head.{name}": value for name, value in head.params.items()})
    blocks.update({"encoder.gain": encoder.gain, "encoder.bias": encoder.bias,
                   "encoder.mix": encoder.mix})
    return blocks


def save_checkpoint(path, blocks: dict[str, np.ndarray]) -> None:
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        for name in sorted(blocks):
            arr = np.asarray(blocks[name], dtype=np.float64)
            dims = " ".join(str(d) for d in arr.shape)
            header = f"block {name} {arr.ndim}" + (f" {dims}" if dims else "") + "\n"
            fh.write(header.encode())
            fh.write(arr.astype("<f8").tobytes())
        fh.write(b"end\n")


def load_checkpoint(path) -> dict[str, np.ndarray]:
    blocks = {}
    with open(path, "rb") as fh:
        if fh.readline() != CHECKPOINT_MAGIC:
            raise InvalidInputError(f"{path}: not a checkpoint file")
        while True:
            line = fh.readline().decode()
            if line == "end\n":
                break
            if not line.startswith("block "):
                raise InvalidInputError(f"{path}: malformed block header {line!r}")
            parts = line.split()
            name = parts[1]
            ndim = int(parts[2])
            shape = tuple(int(v) for v in parts[3:3 + ndim])
            count = int(np.prod(shape)) if shape else 1
            raw = fh.read(count * 8)
            if len(raw) != count * 8:
                raise InvalidInputError(f"{path}: truncated block {name!r}")
            blocks[name] = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
    return blocks


def restore_checkpoint(blocks: dict[str, np.ndarray], student: StudentModel,
                       head: DetectionHead, encoder: LabelEncoderParams) -> None:
    for name in student.params:
        student.params[name] = blocks[f"student.{name}"].reshape(student.params[name].shape)
    for name in head.params:
        head.params[name] = blocks[f"head.{name}"].reshape(head.params[name].shape)
    encoder.gain = blocks["encoder.gain"]
    encoder.bias = blocks["encoder.bias"]
    encoder.mix = blocks["encoder.mix"]
