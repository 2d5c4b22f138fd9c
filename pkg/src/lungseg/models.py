"""Graph builders for the two segmentation architectures.

Both networks share a 5-level encoder-decoder topology over NHWC inputs whose
spatial sides are divisible by 16: four pooled encoder stages, a bottleneck,
and four decoder stages (nearest-neighbor upsampling + 3x3 convolution, skip
concatenation, stage block), closed by a 1x1 convolution and sigmoid.

The plain variant uses double 3x3 convolutions per stage and raw skip
concatenations. The multiresolution variant replaces each stage with a block
of three chained 3x3 conv+batchnorm+relu paths (filter counts floor(W/6),
floor(W/3), floor(W/2) for W = alpha * U) whose concatenation is summed with a
1x1 projection of the block input, and replaces the four skips with residual
convolution chains of lengths 4, 3, 2, 1 (shallowest to deepest).

Deep supervision attaches 1x1 sigmoid heads to the bottleneck and to each
decoder stage output, yielding five prediction heads ordered final -> deepest.
"""

from __future__ import annotations

import math

import numpy as np

from .nn import (
    BatchNorm,
    Conv2D,
    DeepSupervisionSpec,
    Tensor,
    add,
    concat_channels,
    maxpool2,
    no_grad,
    relu,
    sigmoid,
    upsample2,
)

DEFAULT_ALPHA = 1.67
_AUX_STREAM = 7919  # seed offset for head weights added after the main build


class _DoubleConv:
    """Two 3x3 convolutions with relu, the plain encoder/decoder stage."""

    def __init__(self, in_channels: int, out_channels: int, rng, dtype):
        self.conv1 = Conv2D(in_channels, out_channels, 3, rng, dtype=dtype)
        self.conv2 = Conv2D(out_channels, out_channels, 3, rng, dtype=dtype)
        self.out_channels = out_channels

    def __call__(self, x: Tensor, train: bool) -> Tensor:
        return relu(self.conv2(relu(self.conv1(x))))

    def named_params(self, prefix: str):
        yield from self.conv1.named_params(f"{prefix}.conv1")
        yield from self.conv2.named_params(f"{prefix}.conv2")

    def named_state(self, prefix: str):
        return
        yield


class MultiResBlock:
    """Three chained 3x3 conv+batchnorm+relu stages whose concatenation is
    summed with a 1x1 projection of the input, then batch-normalized.

    Filter counts are floor(W/6), floor(W/3), floor(W/2) with W = alpha * U,
    so the block emits floor(W/6) + floor(W/3) + floor(W/2) channels.
    """

    def __init__(self, in_channels: int, filters_u: int, alpha: float, rng, dtype=np.float32):
        w = alpha * filters_u
        if w < 6:
            raise ValueError(f"alpha * U = {w} is below the minimum of 6")
        f1, f2, f3 = math.floor(w / 6), math.floor(w / 3), math.floor(w / 2)
        self.filter_counts = (f1, f2, f3)
        self.out_channels = f1 + f2 + f3
        self.conv1 = Conv2D(in_channels, f1, 3, rng, use_bias=False, dtype=dtype)
        self.bn1 = BatchNorm(f1, dtype=dtype)
        self.conv2 = Conv2D(f1, f2, 3, rng, use_bias=False, dtype=dtype)
        self.bn2 = BatchNorm(f2, dtype=dtype)
        self.conv3 = Conv2D(f2, f3, 3, rng, use_bias=False, dtype=dtype)
        self.bn3 = BatchNorm(f3, dtype=dtype)
        self.proj = Conv2D(in_channels, self.out_channels, 1, rng, use_bias=False, dtype=dtype)
        self.bn_out = BatchNorm(self.out_channels, dtype=dtype)

    def __call__(self, x: Tensor, train: bool) -> Tensor:
        a = relu(self.bn1(self.conv1(x), train))
        b = relu(self.bn2(self.conv2(a), train))
        c = relu(self.bn3(self.conv3(b), train))
        stacked = concat_channels(concat_channels(a, b), c)
        return self.bn_out(add(stacked, self.proj(x)), train)

    def named_params(self, prefix: str):
        for name, module in self._named_modules():
            yield from module.named_params(f"{prefix}.{name}")

    def named_state(self, prefix: str):
        for name, module in self._named_modules():
            yield from module.named_state(f"{prefix}.{name}")

    def _named_modules(self):
        return (
            ("conv1", self.conv1),
            ("bn1", self.bn1),
            ("conv2", self.conv2),
            ("bn2", self.bn2),
            ("conv3", self.conv3),
            ("bn3", self.bn3),
            ("proj", self.proj),
            ("bn_out", self.bn_out),
        )


class ResPath:
    """Skip-connection chain of residual units (3x3 conv plus 1x1 projection,
    summed, relu); channel count is preserved."""

    def __init__(self, channels: int, length: int, rng, dtype=np.float32):
        if length not in (1, 2, 3, 4):
            raise ValueError(f"res path length must be 1..4, got {length}")
        self.length = length
        self.units = [
            (
                Conv2D(channels, channels, 3, rng, dtype=dtype),
                Conv2D(channels, channels, 1, rng, dtype=dtype),
            )
            for _ in range(length)
        ]
        self.out_channels = channels

    def __call__(self, x: Tensor, train: bool) -> Tensor:
        for conv, proj in self.units:
            x = relu(add(conv(x), proj(x)))
        return x

    def named_params(self, prefix: str):
        for index, (conv, proj) in enumerate(self.units, start=1):
            yield from conv.named_params(f"{prefix}.unit{index}.conv")
            yield from proj.named_params(f"{prefix}.unit{index}.proj")

    def named_state(self, prefix: str):
        return
        yield


class _UpConv:
    """Nearest-neighbor x2 upsampling followed by a 3x3 convolution."""

    def __init__(self, in_channels: int, out_channels: int, rng, dtype):
        self.conv = Conv2D(in_channels, out_channels, 3, rng, dtype=dtype)
        self.out_channels = out_channels

    def __call__(self, x: Tensor) -> Tensor:
        return self.conv(upsample2(x))

    def named_params(self, prefix: str):
        yield from self.conv.named_params(f"{prefix}.conv")

    def named_state(self, prefix: str):
        return
        yield


class Graph:
    """A built network: ordered stages, a named parameter inventory, and one
    or five sigmoid prediction heads."""

    def __init__(self, kind: str, in_channels: int, base_filters: int, alpha: float, seed: int, dtype):
        if in_channels not in (5, 3):
            raise ValueError(f"in_channels must be 5 or 3, got {in_channels}")
        self.kind = kind
        self.in_channels = in_channels
        self.base_filters = base_filters
        self.alpha = alpha
        self.seed = seed
        self.dtype = dtype
        rng = np.random.default_rng(seed)

        if kind == "unet":
            stage_out = [base_filters * 2**level for level in range(5)]

            def make_stage(cin: int, level: int):
                return _DoubleConv(cin, stage_out[level], rng, dtype)

            self.respaths = None
        elif kind == "multires":
            units = [base_filters * 2**level for level in range(5)]

            def make_stage(cin: int, level: int):
                return MultiResBlock(cin, units[level], alpha, rng, dtype)

            self.respaths = []
        else:
            raise ValueError(f"unknown graph kind {kind!r}")

        self.encoders = []
        cin = in_channels
        for level in range(4):
            stage = make_stage(cin, level)
            self.encoders.append(stage)
            if self.respaths is not None:
                self.respaths.append(ResPath(stage.out_channels, 4 - level, rng, dtype))
            cin = stage.out_channels
        self.bottleneck = make_stage(cin, 4)

        self.upconvs = []
        self.decoders = []
        above = self.bottleneck.out_channels
        for level in range(3, -1, -1):
            skip_channels = self.encoders[level].out_channels
            up = _UpConv(above, skip_channels, rng, dtype)
            dec = make_stage(skip_channels * 2, level)
            self.upconvs.insert(0, up)
            self.decoders.insert(0, dec)
            above = dec.out_channels
        self.final = Conv2D(self.decoders[0].out_channels, 1, 1, rng, dtype=dtype)

        self.aux_heads = None
        self.ds_spec: DeepSupervisionSpec | None = None

    # -- structure ---------------------------------------------------------
    @property
    def deep_supervised(self) -> bool:
        return self.aux_heads is not None

    @property
    def head_count(self) -> int:
        return 5 if self.deep_supervised else 1

    def _named_modules(self):
        for index, enc in enumerate(self.encoders, start=1):
            yield f"enc{index}", enc
        if self.respaths is not None:
            for index, path in enumerate(self.respaths, start=1):
                yield f"respath{index}", path
        yield "bottleneck", self.bottleneck
        for index in range(4, 0, -1):
            yield f"up{index}", self.upconvs[index - 1]
            yield f"dec{index}", self.decoders[index - 1]
        yield "final", self.final
        if self.aux_heads is not None:
            for size, head in zip(("64", "32", "16", "8"), self.aux_heads):
                yield f"aux{size}", head

    def parameters(self):
        return [param for _, param in self.named_params()]

    def named_params(self):
        for prefix, module in self._named_modules():
            yield from module.named_params(prefix)

    def named_arrays(self) -> dict[str, np.ndarray]:
        """Full array inventory: trainable parameters plus running statistics."""
        out: dict[str, np.ndarray] = {}
        for name, param in self.named_params():
            out[name] = param.data
        for prefix, module in self._named_modules():
            for name, arr in module.named_state(prefix):
                out[name] = arr
        return out

    # -- compute -----------------------------------------------------------
    def forward(self, x, train: bool = False) -> list[Tensor]:
        heads, _ = self.forward_with_intermediates(x, train)
        return heads

    def forward_with_intermediates(self, x, train: bool = False):
        t = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=self.dtype))
        if t.data.ndim != 4 or t.data.shape[3] != self.in_channels:
            raise ValueError(
                f"expected NHWC input with {self.in_channels} channels, got {t.shape}"
            )
        skips: list[Tensor] = []
        for encoder in self.encoders:
            s = encoder(t, train)
            skips.append(s)
            t = maxpool2(s)
        bottleneck = self.bottleneck(t, train)

        decoder_outputs: list[Tensor] = []  # deepest (16) -> final (128)
        t = bottleneck
        for level in range(3, -1, -1):
            t = self.upconvs[level](t)
            skip = skips[level]
            if self.respaths is not None:
                skip = self.respaths[level](skip, train)
            t = concat_channels(skip, t)
            t = self.decoders[level](t, train)
            decoder_outputs.append(t)

        final = sigmoid(self.final(t))
        intermediates = {
            "skips": skips,
            "bottleneck": bottleneck,
            "decoder_outputs": decoder_outputs,
        }
        if not self.deep_supervised:
            return [final], intermediates
        heads = [
            final,
            sigmoid(self.aux_heads[0](decoder_outputs[2])),  # half resolution
            sigmoid(self.aux_heads[1](decoder_outputs[1])),  # quarter
            sigmoid(self.aux_heads[2](decoder_outputs[0])),  # eighth
            sigmoid(self.aux_heads[3](bottleneck)),          # sixteenth
        ]
        return heads, intermediates

    def predict(self, features: np.ndarray) -> np.ndarray:
        """Probability map for a single (H, W, C) instance, final head only."""
        with no_grad():
            heads = self.forward(np.asarray(features, dtype=self.dtype)[None, ...], train=False)
        return heads[0].data[0, :, :, 0]


def build_unet(in_channels: int, base_filters: int, seed: int = 0, dtype=np.float32) -> Graph:
    """Plain encoder-decoder with doubling filter counts per level."""
    if base_filters < 4:
        raise ValueError("base_filters must be at least 4")
    return Graph("unet", in_channels, base_filters, alpha=0.0, seed=seed, dtype=dtype)


def build_multires_unet(
    in_channels: int,
    base_filters: int,
    alpha: float = DEFAULT_ALPHA,
    seed: int = 0,
    dtype=np.float32,
) -> Graph:
    """Multiresolution variant: stage blocks plus residual skip paths."""
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    return Graph("multires", in_channels, base_filters, alpha=alpha, seed=seed, dtype=dtype)


def attach_deep_supervision(graph: Graph, spec: DeepSupervisionSpec | None = None) -> Graph:
    """Add 1x1 sigmoid heads at the bottleneck and the three coarse decoder
    stages; the existing full-resolution head stays first."""
    if graph.deep_supervised:
        raise ValueError("graph already carries deep-supervision heads")
    spec = spec or DeepSupervisionSpec()
    rng = np.random.default_rng((graph.seed, _AUX_STREAM))
    channels = [
        graph.decoders[1].out_channels,  # half-resolution stage
        graph.decoders[2].out_channels,
        graph.decoders[3].out_channels,
        graph.bottleneck.out_channels,
    ]
    graph.aux_heads = [Conv2D(c, 1, 1, rng, dtype=graph.dtype) for c in channels]
    graph.ds_spec = spec
    return graph


def supervision_targets(masks: np.ndarray) -> list[np.ndarray]:
    """Ground-truth stack for the five heads: the mask followed by four 2x2
    max-pool reductions, so any tumor pixel survives to the coarsest level."""
    m = np.asarray(masks, dtype=np.float32)
    if m.ndim != 3:
        raise ValueError(f"expected (N, H, W) masks, got shape {m.shape}")
    targets = [m[..., None]]
    current = m
    for _ in range(4):
        n, h, w = current.shape
        if h % 2 or w % 2:
            raise ValueError(f"mask sides must halve cleanly, got {h}x{w}")
        current = current.reshape(n, h // 2, 2, w // 2, 2).max(axis=(2, 4))
        targets.append(current[..., None])
    return targets
