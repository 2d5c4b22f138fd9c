"""Deterministic mini-batch training over prepared instances.

Given a seed, batch order, parameter updates, and therefore the saved weights
are bit-reproducible run to run. The learning rate decays per epoch by
default (lr / (1 + decay * epoch)); per-iteration decay is available as an
option."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .evaluation import binarize, dice_slice
from .models import Graph, supervision_targets
from .nn import Optimizer, OptimizerConfig, Tensor, bce_loss, deep_supervised_loss, soft_dice_loss, weighted_sum
from .pipeline import Instance

_SHUFFLE_STREAM = 0xB0BA


@dataclass(frozen=True)
class EpochLog:
    epoch: int
    mean_loss: float
    train_dice: float


def _stacked(instances: list[Instance]) -> tuple[np.ndarray, np.ndarray]:
    features = np.stack([inst.features for inst in instances]).astype(np.float32)
    masks = np.stack([inst.mask for inst in instances]).astype(np.float32)
    return features, masks


def _batch_loss(graph: Graph, heads, masks: np.ndarray, loss: str) -> Tensor:
    if graph.deep_supervised:
        targets = supervision_targets(masks)
        if loss == "bce":
            return deep_supervised_loss(heads, targets, graph.ds_spec)
        per_level = [soft_dice_loss(h, t) for h, t in zip(heads, targets)]
        return weighted_sum(per_level, graph.ds_spec.weights)
    target = masks[..., None]
    if loss == "bce":
        return bce_loss(heads[0], target)
    return soft_dice_loss(heads[0], target)


def mean_instance_dice(
    graph: Graph,
    instances: list[Instance],
    threshold: float = 0.5,
    batch_size: int = 16,
) -> float:
    """Plain-inference mean dice over instances at the given threshold."""
    from .nn import no_grad

    scores: list[float] = []
    with no_grad():
        for start in range(0, len(instances), batch_size):
            chunk = instances[start : start + batch_size]
            features = np.stack([inst.features for inst in chunk]).astype(np.float32)
            probs = graph.forward(Tensor(features), train=False)[0].data[..., 0]
            for prob, inst in zip(probs, chunk):
                scores.append(dice_slice(binarize(prob, threshold), inst.mask))
    return float(np.mean(scores)) if scores else 0.0


def train_graph(
    graph: Graph,
    instances: list[Instance],
    optimizer_config: OptimizerConfig,
    *,
    epochs: int,
    batch_size: int = 8,
    seed: int = 0,
    loss: str = "bce",
    decay_per_iteration: bool = False,
    log_fn=None,
) -> list[EpochLog]:
    """Train in place and return one log row per epoch (mean batch loss and
    training-set mean dice at threshold 0.5)."""
    if epochs < 0:
        raise ValueError("epochs must be non-negative")
    if batch_size < 1:
        raise ValueError("batch_size must be positive")
    if loss not in ("bce", "softdice"):
        raise ValueError(f"loss must be 'bce' or 'softdice', got {loss!r}")
    if not instances:
        raise ValueError("no training instances")
    if graph.deep_supervised and graph.ds_spec is None:
        raise ValueError("deeply supervised graph is missing its loss weights")

    features, masks = _stacked(instances)
    params = [p.data for p in graph.parameters()]
    param_tensors = graph.parameters()
    optimizer = Optimizer(params, optimizer_config)
    rng = np.random.default_rng((seed, _SHUFFLE_STREAM))
    n = len(instances)
    logs: list[EpochLog] = []
    iteration = 0

    for epoch in range(epochs):
        order = rng.permutation(n)
        losses: list[float] = []
        for start in range(0, n, batch_size):
            batch = order[start : start + batch_size]
            heads = graph.forward(Tensor(features[batch]), train=True)
            batch_loss = _batch_loss(graph, heads, masks[batch], loss)
            for p in param_tensors:
                p.grad = None
            batch_loss.backward()
            grads = [
                p.grad if p.grad is not None else np.zeros_like(p.data)
                for p in param_tensors
            ]
            optimizer.step(grads, iteration if decay_per_iteration else epoch)
            iteration += 1
            losses.append(float(batch_loss.data))
        row = EpochLog(
            epoch=epoch,
            mean_loss=float(np.mean(losses)),
            train_dice=mean_instance_dice(graph, instances),
        )
        logs.append(row)
        if log_fn is not None:
            log_fn(row)
    return logs
