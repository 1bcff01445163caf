"""Shared random-input generators for the test suite."""

import numpy as np

from stepdistill import Detection, FeaturePyramid, LabelSet


def random_distribution(rng, shape, floor=0.02):
    """A strictly positive probability grid, bounded away from 0."""
    a = rng.uniform(floor, 1.0, size=shape)
    return a / a.sum()


def random_pyramid_pair(seed, max_side=16, max_scales=3):
    """Two shape-identical pyramids with standard-normal entries."""
    rng = np.random.default_rng(seed)
    p = int(rng.integers(1, max_scales + 1))
    shapes = [(int(rng.integers(2, max_side + 1)), int(rng.integers(2, max_side + 1)))
              for _ in range(p)]
    k = FeaturePyramid([rng.standard_normal(s) for s in shapes])
    ke = FeaturePyramid([rng.standard_normal(s) for s in shapes])
    return k, ke


def random_detection_instance(rng, max_images=5, max_boxes=6, num_classes=3,
                              image_size=(100, 100)):
    """Ground truths plus detections that mix jittered matches and misses."""
    n_images = int(rng.integers(1, max_images + 1))
    gts = []
    dets = []
    for img in range(n_images):
        n = int(rng.integers(0, max_boxes + 1))
        boxes = []
        classes = []
        for _ in range(n):
            x0, y0 = rng.uniform(0, 70, 2)
            boxes.append((float(x0), float(y0),
                          float(x0 + rng.uniform(1, 28)), float(y0 + rng.uniform(1, 28))))
            classes.append(int(rng.integers(0, num_classes)))
        gts.append(LabelSet(tuple(boxes), tuple(classes), image_size, num_classes))
        for _ in range(int(rng.integers(0, max_boxes + 1))):
            if boxes and rng.uniform() < 0.7:
                j = int(rng.integers(0, len(boxes)))
                bx = boxes[j]
                jitter = rng.uniform(-3, 3, 4)
                cand = (bx[0] + jitter[0], bx[1] + jitter[1],
                        bx[2] + jitter[2], bx[3] + jitter[3])
                if cand[0] >= cand[2] or cand[1] >= cand[3]:
                    continue
                cls = int(rng.integers(0, num_classes)) if rng.uniform() < 0.3 else classes[j]
            else:
                x0, y0 = rng.uniform(0, 70, 2)
                cand = (float(x0), float(y0),
                        float(x0 + rng.uniform(1, 28)), float(y0 + rng.uniform(1, 28)))
                cls = int(rng.integers(0, num_classes))
            dets.append(Detection(tuple(float(v) for v in cand), cls,
                                  float(rng.uniform(0.05, 1.0)), img))
    return gts, dets
