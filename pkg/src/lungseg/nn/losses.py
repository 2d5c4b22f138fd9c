"""Training losses: pixel-mean binary cross-entropy (default), a soft dice
alternative, and the descending-weighted multi-head combination used with
deep supervision."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autograd import Tensor, grad_enabled
from .ops import weighted_sum

BCE_CLAMP = 1e-7


@dataclass(frozen=True)
class DeepSupervisionSpec:
    """Loss weights for the five prediction heads, ordered final -> deepest."""

    weights: tuple[float, float, float, float, float] = (1.0, 0.8, 0.6, 0.4, 0.2)

    def __post_init__(self):
        if len(self.weights) != 5:
            raise ValueError("exactly five head weights required")
        if abs(self.weights[0] - 1.0) > 1e-12:
            raise ValueError("the final-head weight must be 1.0")
        for w_prev, w_next in zip(self.weights, self.weights[1:]):
            if not w_next < w_prev:
                raise ValueError(f"weights must be strictly descending, got {self.weights}")
        if any(not 0.0 < w <= 1.0 for w in self.weights):
            raise ValueError(f"weights must lie in (0, 1], got {self.weights}")


def _aligned_target(pred: Tensor, target) -> np.ndarray:
    t = np.asarray(target, dtype=pred.data.dtype)
    if t.shape != pred.data.shape:
        raise ValueError(f"target shape {t.shape} does not match prediction {pred.shape}")
    return t


def bce_loss(pred: Tensor, target) -> Tensor:
    """Mean binary cross-entropy over all elements, with predictions clamped
    to [1e-7, 1 - 1e-7] before the logarithms."""
    t = _aligned_target(pred, target)
    p = np.clip(pred.data, BCE_CLAMP, 1.0 - BCE_CLAMP)
    loss = -(t * np.log(p) + (1.0 - t) * np.log1p(-p)).mean()
    out_data = np.asarray(loss, dtype=pred.data.dtype)

    if not grad_enabled():
        return Tensor(out_data)

    def backward(grad: np.ndarray) -> None:
        inside = (pred.data > BCE_CLAMP) & (pred.data < 1.0 - BCE_CLAMP)
        g = (p - t) / (p * (1.0 - p)) / p.size
        pred.accumulate(grad * g * inside)

    return Tensor(out_data, parents=(pred,), backward=backward)


def soft_dice_loss(pred: Tensor, target, smooth: float = 1.0) -> Tensor:
    """1 - (2*sum(p*t) + s) / (sum(p) + sum(t) + s) over the whole batch."""
    t = _aligned_target(pred, target)
    p = pred.data
    numer = 2.0 * (p * t).sum() + smooth
    denom = p.sum() + t.sum() + smooth
    out_data = np.asarray(1.0 - numer / denom, dtype=pred.data.dtype)

    if not grad_enabled():
        return Tensor(out_data)

    def backward(grad: np.ndarray) -> None:
        pred.accumulate(grad * (numer - 2.0 * t * denom) / denom**2)

    return Tensor(out_data, parents=(pred,), backward=backward)


def deep_supervised_loss(outputs: list[Tensor], targets: list, spec: DeepSupervisionSpec) -> Tensor:
    """sum_k weights[k] * bce(outputs[k], targets[k]) over the five heads."""
    if len(outputs) != 5 or len(targets) != 5:
        raise ValueError(
            f"deep supervision needs 5 outputs and 5 targets, got {len(outputs)}/{len(targets)}"
        )
    losses = [bce_loss(out, tgt) for out, tgt in zip(outputs, targets)]
    return weighted_sum(losses, spec.weights)
