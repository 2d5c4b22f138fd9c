"""Single-level 2D discrete wavelet analysis/synthesis and low-pass approximation chains.

The default transform is the orthonormal Haar pair, evaluated in exact block
arithmetic: each non-overlapping 2x2 block ``[[a, b], [c, d]]`` (row-major)
of the input maps to

    approx   = (a + b + c + d) / 2
    detail_h = (a + b - c - d) / 2
    detail_v = (a - b + c - d) / 2
    detail_d = (a - b - c + d) / 2

so every coefficient of an integer-valued image is exactly representable and
the transform is an orthogonal map (energy preserving, perfectly invertible).

Other orthonormal filter pairs can be plugged in through ``FilterPair``; those
are applied separably with periodic boundary extension. All computation is
64-bit regardless of the caller's dtype.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class FilterPair:
    """Orthonormal analysis filter pair; synthesis uses the time-reversed taps."""

    lowpass: tuple[float, ...]
    highpass: tuple[float, ...]

    def __post_init__(self):
        if len(self.lowpass) != len(self.highpass) or len(self.lowpass) % 2:
            raise ValueError("filter taps must share an even length")

    @staticmethod
    def from_lowpass(lowpass) -> "FilterPair":
        """Derive the highpass by the quadrature-mirror rule hi[n] = (-1)^n lo[L-1-n]."""
        lo = tuple(float(v) for v in lowpass)
        hi = tuple((-1.0) ** n * lo[len(lo) - 1 - n] for n in range(len(lo)))
        return FilterPair(lo, hi)


_SQRT3 = np.sqrt(3.0)
_NORM = 4.0 * np.sqrt(2.0)

#: 4-tap Daubechies pair, usable wherever the default Haar transform is.
DAUBECHIES2 = FilterPair.from_lowpass(
    [(1 + _SQRT3) / _NORM, (3 + _SQRT3) / _NORM, (3 - _SQRT3) / _NORM, (1 - _SQRT3) / _NORM]
)


@dataclass
class Subbands:
    """One analysis level: low-pass approximation plus three detail orientations."""

    approx: np.ndarray
    detail_h: np.ndarray
    detail_v: np.ndarray
    detail_d: np.ndarray

    def __post_init__(self):
        shapes = {b.shape for b in (self.approx, self.detail_h, self.detail_v, self.detail_d)}
        if len(shapes) != 1:
            raise ValueError(f"subband shapes differ: {sorted(shapes)}")


def _as_even_image(image) -> np.ndarray:
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError(f"expected a 2D image, got shape {img.shape}")
    h, w = img.shape
    if h % 2 or w % 2:
        raise ValueError(f"image dimensions must be even, got {h}x{w}")
    return img


def _analyze_axis(arr: np.ndarray, taps, axis: int) -> np.ndarray:
    """Down-sampled periodic correlation: out[k] = sum_n taps[n] * arr[(2k+n) mod N]."""
    taps = np.asarray(taps, dtype=np.float64)
    n = arr.shape[axis]
    idx = (2 * np.arange(n // 2)[:, None] + np.arange(len(taps))[None, :]) % n
    gathered = np.take(arr, idx, axis=axis)
    return np.tensordot(gathered, taps, axes=([axis + 1], [0]))


def _synthesize_axis(low: np.ndarray, high: np.ndarray, filters: FilterPair, axis: int) -> np.ndarray:
    """Inverse of :func:`_analyze_axis` for an orthonormal pair."""
    lo = np.asarray(filters.lowpass, dtype=np.float64)
    hi = np.asarray(filters.highpass, dtype=np.float64)
    half = low.shape[axis]
    n = 2 * half
    low0 = np.moveaxis(low, axis, 0)
    high0 = np.moveaxis(high, axis, 0)
    out = np.zeros((n,) + low0.shape[1:], dtype=np.float64)
    base = 2 * np.arange(half)
    for tap in range(len(lo)):
        pos = (base + tap) % n
        out[pos] += lo[tap] * low0 + hi[tap] * high0
    return np.moveaxis(out, 0, axis)


def dwt2(image, filters: FilterPair | None = None) -> Subbands:
    """One analysis level of a 2D image with even side lengths.

    ``filters=None`` selects the exact-arithmetic Haar block transform.
    """
    img = _as_even_image(image)
    if filters is None:
        a = img[0::2, 0::2]
        b = img[0::2, 1::2]
        c = img[1::2, 0::2]
        d = img[1::2, 1::2]
        return Subbands(
            approx=(a + b + c + d) / 2.0,
            detail_h=(a + b - c - d) / 2.0,
            detail_v=(a - b + c - d) / 2.0,
            detail_d=(a - b - c + d) / 2.0,
        )
    low0 = _analyze_axis(img, filters.lowpass, axis=0)
    high0 = _analyze_axis(img, filters.highpass, axis=0)
    return Subbands(
        approx=_analyze_axis(low0, filters.lowpass, axis=1),
        detail_h=_analyze_axis(high0, filters.lowpass, axis=1),
        detail_v=_analyze_axis(low0, filters.highpass, axis=1),
        detail_d=_analyze_axis(high0, filters.highpass, axis=1),
    )


def idwt2(sub: Subbands, filters: FilterPair | None = None) -> np.ndarray:
    """Exact inverse of :func:`dwt2` for the same filter choice."""
    a = np.asarray(sub.approx, dtype=np.float64)
    h = np.asarray(sub.detail_h, dtype=np.float64)
    v = np.asarray(sub.detail_v, dtype=np.float64)
    d = np.asarray(sub.detail_d, dtype=np.float64)
    if not (a.shape == h.shape == v.shape == d.shape):
        raise ValueError("subband shapes differ")
    if filters is None:
        out = np.empty((2 * a.shape[0], 2 * a.shape[1]), dtype=np.float64)
        out[0::2, 0::2] = (a + h + v + d) / 2.0
        out[0::2, 1::2] = (a + h - v - d) / 2.0
        out[1::2, 0::2] = (a - h + v - d) / 2.0
        out[1::2, 1::2] = (a - h - v + d) / 2.0
        return out
    low0 = _synthesize_axis(a, v, filters, axis=1)
    high0 = _synthesize_axis(h, d, filters, axis=1)
    return _synthesize_axis(low0, high0, filters, axis=0)


def approx_chain(image, levels: int, filters: FilterPair | None = None) -> list[np.ndarray]:
    """Repeated low-pass analysis; element k (1-based) has side lengths divided by 2**k."""
    if levels < 1:
        raise ValueError("levels must be a positive integer")
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError(f"expected a 2D image, got shape {img.shape}")
    factor = 2 ** levels
    if img.shape[0] % factor or img.shape[1] % factor:
        raise ValueError(
            f"image dimensions {img.shape} not divisible by 2**levels = {factor}"
        )
    chain: list[np.ndarray] = []
    current = img
    for _ in range(levels):
        current = dwt2(current, filters).approx
        chain.append(current)
    return chain
