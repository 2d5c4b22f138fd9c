"""Inference-time machinery: rotation-averaged prediction, binarization, the
dice conventions, slice-level detection statistics, and report assembly.

Dice follows the true-negative / false-positive conventions: an empty ground
truth with an empty prediction scores 1.0, an empty ground truth with any
predicted pixel scores 0.0, and every other pair scores 2|x & y| / (|x| + |y|).
Binarization is strict: a pixel equal to the threshold is background.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np

from .datastore import Volume
from .pipeline import CropWindow, Instance, build_instance, rotate_stack


@dataclass(frozen=True)
class Confusion:
    """Slice-level detection counts."""

    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


@dataclass(frozen=True)
class MetricsReport:
    slice_ids: tuple[str, ...]
    per_slice_dice: tuple[float, ...]
    mean_dice: float
    confusion: Confusion
    f1: float
    model: str
    rotations: int
    threshold: float


def f1_score(confusion: Confusion) -> float:
    """2*tp / (2*tp + fp + fn), defined as 0 when that denominator is 0."""
    denom = 2 * confusion.tp + confusion.fp + confusion.fn
    return 2.0 * confusion.tp / denom if denom else 0.0


def binarize(prob: np.ndarray, threshold: float) -> np.ndarray:
    """Pixel = 1 iff probability is strictly above the threshold."""
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must lie in (0, 1), got {threshold}")
    return (np.asarray(prob) > threshold).astype(np.uint8)


def dice_slice(pred: np.ndarray, gt: np.ndarray) -> float:
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"prediction {pred.shape} and ground truth {gt.shape} disagree")
    pred_n = int(np.count_nonzero(pred))
    gt_n = int(np.count_nonzero(gt))
    if gt_n == 0:
        return 1.0 if pred_n == 0 else 0.0
    overlap = int(np.count_nonzero(np.logical_and(pred, gt)))
    return 2.0 * overlap / (pred_n + gt_n)


def detection_stats(preds: list[np.ndarray], gts: list[np.ndarray]) -> tuple[Confusion, float]:
    """A slice counts as predicted-positive (or positive) iff any pixel is set."""
    if len(preds) != len(gts):
        raise ValueError(f"{len(preds)} predictions vs {len(gts)} ground truths")
    tp = fp = tn = fn = 0
    for pred, gt in zip(preds, gts):
        has_pred = bool(np.any(pred))
        has_gt = bool(np.any(gt))
        if has_gt and has_pred:
            tp += 1
        elif has_gt:
            fn += 1
        elif has_pred:
            fp += 1
        else:
            tn += 1
    confusion = Confusion(tp=tp, fp=fp, tn=tn, fn=fn)
    return confusion, f1_score(confusion)




def tta_angles(n_rotations: int, rng: np.random.Generator | None = None) -> list[float]:
    """Evenly spaced angles over [0, 360) including the identity, or seeded
    random angles (identity first) when a generator is supplied."""
    if n_rotations < 1:
        raise ValueError("n_rotations must be at least 1")
    if rng is None:
        return [360.0 * k / n_rotations for k in range(n_rotations)]
    return [0.0] + list(rng.uniform(0.0, 360.0, size=n_rotations - 1))


def tta_predict(
    graph,
    instance: Instance,
    n_rotations: int,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Average of per-angle predictions, each mapped back through the inverse
    rotation. One rotation means plain inference, bit for bit."""
    angles = tta_angles(n_rotations, rng)
    if len(angles) == 1:
        return graph.predict(instance.features)
    acc = np.zeros(instance.mask.shape, dtype=np.float64)
    for angle in angles:
        if angle == 0.0:
            acc += graph.predict(instance.features)
        else:
            prob = graph.predict(rotate_stack(instance.features, angle))
            acc += rotate_stack(prob.astype(np.float32), -angle)
    return (acc / len(angles)).astype(np.float32)


def evaluate_run(
    graph,
    volumes: list[Volume],
    window: CropWindow,
    n_rotations: int,
    threshold: float,
    channels: str = "five",
    rng: np.random.Generator | None = None,
) -> MetricsReport:
    """Slice-wise evaluation over whole volumes with the training crop window.

    Mean dice is the unweighted mean over every slice, tumor-bearing or not.
    """
    slice_ids: list[str] = []
    dices: list[float] = []
    preds: list[np.ndarray] = []
    gts: list[np.ndarray] = []
    for volume in volumes:
        for index in range(volume.n_slices):
            instance = build_instance(volume, index, window, channels)
            prob = tta_predict(graph, instance, n_rotations, rng)
            pred = binarize(prob, threshold)
            slice_ids.append(instance.slice_id)
            dices.append(dice_slice(pred, instance.mask))
            preds.append(pred)
            gts.append(instance.mask)
    if not dices:
        raise ValueError("no slices to evaluate")
    confusion, f1 = detection_stats(preds, gts)
    model = graph.kind + ("+ds" if graph.deep_supervised else "")
    return MetricsReport(
        slice_ids=tuple(slice_ids),
        per_slice_dice=tuple(dices),
        mean_dice=float(np.mean(dices)),
        confusion=confusion,
        f1=f1,
        model=model,
        rotations=n_rotations,
        threshold=threshold,
    )


_GT_CONTOUR = 255
_PRED_CONTOUR = 170


def _contour(mask: np.ndarray) -> np.ndarray:
    eroded = cv2.erode(mask, np.ones((3, 3), dtype=np.uint8))
    return (mask > 0) & (eroded == 0)


def write_overlay(instance: Instance, pred: np.ndarray, path) -> None:
    """8-bit grayscale base image with ground-truth (255) and prediction (170)
    contours burned in."""
    base = np.clip(instance.features[:, :, 0] * 255.0, 0, 255).astype(np.uint8)
    overlay = base.copy()
    overlay[_contour(instance.mask.astype(np.uint8))] = _GT_CONTOUR
    overlay[_contour(np.asarray(pred, dtype=np.uint8))] = _PRED_CONTOUR
    if not cv2.imwrite(str(Path(path)), overlay):
        raise OSError(f"could not write overlay image {path}")
