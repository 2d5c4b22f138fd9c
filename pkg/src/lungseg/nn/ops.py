"""Differentiable array operations in NHWC layout.

Every op validates its shapes, computes the forward value with numpy, and
registers an exact backward closure. Convolution is cross-correlation lowered
to one matrix product per kernel tap; the backward pass re-reads the padded
input instead of caching column matrices, keeping the tape's memory footprint
near the size of the activations themselves.
"""

from __future__ import annotations

import numpy as np

from .autograd import Tensor, grad_enabled


def _require_4d(x: Tensor, op: str) -> None:
    if x.data.ndim != 4:
        raise ValueError(f"{op} expects NHWC input, got shape {x.shape}")


def _pad_amounts(size: int, k: int, stride: int, padding: str) -> tuple[int, int]:
    if padding == "valid":
        return 0, 0
    if padding == "same":
        out = -(-size // stride)  # ceil
        total = max((out - 1) * stride + k - size, 0)
        return total // 2, total - total // 2
    raise ValueError(f"padding must be 'same' or 'valid', got {padding!r}")


def _tap_view(xp: np.ndarray, di: int, dj: int, h_out: int, w_out: int, stride: int) -> np.ndarray:
    return xp[:, di : di + (h_out - 1) * stride + 1 : stride, dj : dj + (w_out - 1) * stride + 1 : stride, :]


def conv2d(
    x: Tensor,
    kernel: Tensor,
    stride: int = 1,
    padding: str = "same",
    bias: Tensor | None = None,
) -> Tensor:
    """Cross-correlation of an NHWC batch with a (k, k, Cin, Cout) kernel.

    Lowered to one matrix product per kernel tap, which keeps the working set
    at one (N*Ho*Wo, Cin) slab instead of a k*k-times-larger column matrix.
    """
    _require_4d(x, "conv2d")
    if kernel.data.ndim != 4 or kernel.data.shape[0] != kernel.data.shape[1]:
        raise ValueError(f"kernel must be (k, k, Cin, Cout), got {kernel.shape}")
    k = kernel.data.shape[0]
    c_in, c_out = kernel.data.shape[2], kernel.data.shape[3]
    n, h, w, cx = x.data.shape
    if cx != c_in:
        raise ValueError(f"input has {cx} channels, kernel expects {c_in}")
    if stride < 1:
        raise ValueError("stride must be positive")
    if bias is not None and bias.data.shape != (c_out,):
        raise ValueError(f"bias must have shape ({c_out},), got {bias.shape}")

    pt, pb = _pad_amounts(h, k, stride, padding)
    pl, pr = _pad_amounts(w, k, stride, padding)
    h_out = (h + pt + pb - k) // stride + 1
    w_out = (w + pl + pr - k) // stride + 1

    simple = k == 1 and stride == 1
    if simple:
        xp = x.data
        out_flat = x.data.reshape(-1, c_in) @ kernel.data.reshape(c_in, c_out)
    else:
        xp = np.pad(x.data, ((0, 0), (pt, pb), (pl, pr), (0, 0))) if (pt or pb or pl or pr) else x.data
        out_flat = None
        for di in range(k):
            for dj in range(k):
                piece = _tap_view(xp, di, dj, h_out, w_out, stride).reshape(-1, c_in)
                contribution = piece @ kernel.data[di, dj]
                if out_flat is None:
                    out_flat = contribution
                else:
                    out_flat += contribution
    if bias is not None:
        out_flat += bias.data
    out_data = out_flat.reshape(n, h_out, w_out, c_out)

    if not grad_enabled():
        return Tensor(out_data)

    pad_geometry = (pt, pb, pl, pr)

    def backward(grad: np.ndarray) -> None:
        go = grad.reshape(-1, c_out)
        if bias is not None:
            bias.accumulate(go.sum(axis=0))
        if simple:
            kernel.accumulate(
                (x.data.reshape(-1, c_in).T @ go).reshape(kernel.data.shape)
            )
            x.accumulate((go @ kernel.data.reshape(c_in, c_out).T).reshape(x.data.shape))
            return
        g_kernel = np.empty_like(kernel.data)
        g_xp = np.zeros_like(xp)
        for di in range(k):
            for dj in range(k):
                piece = _tap_view(xp, di, dj, h_out, w_out, stride).reshape(-1, c_in)
                g_kernel[di, dj] = piece.T @ go
                g_piece = (go @ kernel.data[di, dj].T).reshape(n, h_out, w_out, c_in)
                _tap_view(g_xp, di, dj, h_out, w_out, stride)[...] += g_piece
        kernel.accumulate(g_kernel)
        pt_, pb_, pl_, pr_ = pad_geometry
        if pt_ or pb_ or pl_ or pr_:
            x.accumulate(g_xp[:, pt_ : g_xp.shape[1] - pb_, pl_ : g_xp.shape[2] - pr_, :])
        else:
            x.accumulate(g_xp)

    parents = (x, kernel) if bias is None else (x, kernel, bias)
    return Tensor(out_data, parents=parents, backward=backward)


def maxpool2(x: Tensor) -> Tensor:
    """2x2 max pooling with stride 2; gradient flows to the first row-major
    maximum of each block."""
    _require_4d(x, "maxpool2")
    n, h, w, c = x.data.shape
    if h % 2 or w % 2:
        raise ValueError(f"maxpool2 needs even spatial dims, got {h}x{w}")
    blocks = (
        x.data.reshape(n, h // 2, 2, w // 2, 2, c)
        .transpose(0, 1, 3, 5, 2, 4)
        .reshape(n, h // 2, w // 2, c, 4)
    )
    argmax = blocks.argmax(axis=-1)
    out_data = np.take_along_axis(blocks, argmax[..., None], axis=-1)[..., 0]

    if not grad_enabled():
        return Tensor(out_data)

    def backward(grad: np.ndarray) -> None:
        g_blocks = np.zeros((n, h // 2, w // 2, c, 4), dtype=grad.dtype)
        np.put_along_axis(g_blocks, argmax[..., None], grad[..., None], axis=-1)
        g = (
            g_blocks.reshape(n, h // 2, w // 2, c, 2, 2)
            .transpose(0, 1, 4, 2, 5, 3)
            .reshape(n, h, w, c)
        )
        x.accumulate(g)

    return Tensor(out_data, parents=(x,), backward=backward)


def upsample2(x: Tensor) -> Tensor:
    """Nearest-neighbor x2 upsampling; gradient sums over replicated cells."""
    _require_4d(x, "upsample2")
    n, h, w, c = x.data.shape
    out_data = x.data.repeat(2, axis=1).repeat(2, axis=2)

    if not grad_enabled():
        return Tensor(out_data)

    def backward(grad: np.ndarray) -> None:
        x.accumulate(grad.reshape(n, h, 2, w, 2, c).sum(axis=(2, 4)))

    return Tensor(out_data, parents=(x,), backward=backward)


def batchnorm(
    x: Tensor,
    scale: Tensor,
    shift: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    train: bool,
    momentum: float = 0.9,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel batch normalization over (N, H, W).

    Train mode normalizes by batch statistics and updates the running buffers
    in place; inference mode normalizes by the running statistics.
    """
    _require_4d(x, "batchnorm")
    c = x.data.shape[3]
    for name, t in (("scale", scale), ("shift", shift)):
        if t.data.shape != (c,):
            raise ValueError(f"{name} must have shape ({c},), got {t.shape}")
    if running_mean.shape != (c,) or running_var.shape != (c,):
        raise ValueError("running statistics must be per-channel vectors")

    if train:
        mean = x.data.mean(axis=(0, 1, 2))
        var = x.data.var(axis=(0, 1, 2))
        running_mean[...] = momentum * running_mean + (1.0 - momentum) * mean
        running_var[...] = momentum * running_var + (1.0 - momentum) * var
    else:
        mean = running_mean.astype(x.data.dtype)
        var = running_var.astype(x.data.dtype)

    inv = 1.0 / np.sqrt(var + eps)
    x_hat = (x.data - mean) * inv
    out_data = scale.data * x_hat + shift.data

    if not grad_enabled():
        return Tensor(out_data)

    def backward(grad: np.ndarray) -> None:
        shift.accumulate(grad.sum(axis=(0, 1, 2)))
        scale.accumulate((grad * x_hat).sum(axis=(0, 1, 2)))
        if train:
            g_mean = grad.mean(axis=(0, 1, 2))
            gx_mean = (grad * x_hat).mean(axis=(0, 1, 2))
            x.accumulate(scale.data * inv * (grad - g_mean - x_hat * gx_mean))
        else:
            x.accumulate(grad * scale.data * inv)

    return Tensor(out_data, parents=(x, scale, shift), backward=backward)


def relu(x: Tensor) -> Tensor:
    out_data = np.maximum(x.data, 0)
    if not grad_enabled():
        return Tensor(out_data)

    def backward(grad: np.ndarray) -> None:
        x.accumulate(grad * (x.data > 0))

    return Tensor(out_data, parents=(x,), backward=backward)


def sigmoid(x: Tensor) -> Tensor:
    d = x.data
    out_data = np.empty_like(d)
    pos = d >= 0
    out_data[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    ex = np.exp(d[~pos])
    out_data[~pos] = ex / (1.0 + ex)

    if not grad_enabled():
        return Tensor(out_data)

    def backward(grad: np.ndarray) -> None:
        x.accumulate(grad * out_data * (1.0 - out_data))

    return Tensor(out_data, parents=(x,), backward=backward)


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    _require_4d(a, "concat_channels")
    _require_4d(b, "concat_channels")
    if a.data.shape[:3] != b.data.shape[:3]:
        raise ValueError(f"cannot concat {a.shape} with {b.shape}")
    split = a.data.shape[3]
    out_data = np.concatenate([a.data, b.data], axis=3)

    if not grad_enabled():
        return Tensor(out_data)

    def backward(grad: np.ndarray) -> None:
        a.accumulate(grad[..., :split])
        b.accumulate(grad[..., split:])

    return Tensor(out_data, parents=(a, b), backward=backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ValueError(f"cannot add {a.shape} to {b.shape}")
    out_data = a.data + b.data

    if not grad_enabled():
        return Tensor(out_data)

    def backward(grad: np.ndarray) -> None:
        a.accumulate(grad)
        b.accumulate(grad)

    return Tensor(out_data, parents=(a, b), backward=backward)


def weighted_sum(tensors: list[Tensor], weights) -> Tensor:
    """Scalar combination sum_k weights[k] * tensors[k] (used by losses)."""
    if len(tensors) != len(weights):
        raise ValueError("one weight per tensor required")
    out_data = sum(w * t.data for w, t in zip(weights, tensors))

    if not grad_enabled():
        return Tensor(out_data)

    def backward(grad: np.ndarray) -> None:
        for w, t in zip(weights, tensors):
            t.accumulate(grad * w)

    return Tensor(out_data, parents=tuple(tensors), backward=backward)
