"""Shared test utilities: finite-difference gradient checking and a seeded rng."""

from __future__ import annotations

import numpy as np
import pytest


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


def max_rel_grad_error(
    loss_fn,
    tensors,
    rng: np.random.Generator,
    samples: int = 8,
    h: float = 1e-6,
    floor: float | None = None,
) -> float:
    """Worst-case relative error between analytic gradients already stored on
    ``tensors`` and central finite differences of ``loss_fn``.

    ``loss_fn`` re-evaluates the scalar loss from the tensors' current data.
    For each tensor a deterministic random subset of coordinates is probed.
    Near-zero gradients are compared on an absolute scale: ``floor`` if given,
    otherwise 1e-4 times the tensor's own gradient magnitude.
    """
    worst = 0.0
    for tensor in tensors:
        grad = tensor.grad
        assert grad is not None, "tensor did not receive a gradient"
        assert grad.shape == tensor.data.shape
        scale = floor if floor is not None else 1e-4 * max(float(np.abs(grad).max()), 1e-8)
        count = min(samples, tensor.data.size)
        flat = rng.choice(tensor.data.size, size=count, replace=False)
        for flat_index in flat:
            index = np.unravel_index(flat_index, tensor.data.shape)
            original = tensor.data[index]
            tensor.data[index] = original + h
            plus = loss_fn()
            tensor.data[index] = original - h
            minus = loss_fn()
            tensor.data[index] = original
            numeric = (plus - minus) / (2.0 * h)
            analytic = grad[index]
            denom = max(abs(numeric), abs(analytic), scale)
            worst = max(worst, abs(numeric - analytic) / denom)
    return worst
