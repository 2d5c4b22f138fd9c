"""Volume-to-instance preparation: normalization, cropping, resizing, neighbor
stacking, wavelet channels, augmentation, and patient-level fold splitting.

An instance is a 128x128 feature stack plus a binary mask. The five-channel
layout is [original, previous, next, approx1, approx2]; the three-channel
ablation drops the two wavelet approximations. The previous/next channels
replicate the edge slice at volume boundaries. Wavelet channels come from the
cropped slice resized to 256x256 and run through two low-pass analysis levels
(128x128 and 64x64, the latter upsampled back to 128x128), so their values sit
in [0, 2] and [0, 4] after the per-level low-pass gain of 2.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import cv2
import numpy as np

from .datastore import MANUFACTURER_RANGES, Volume
from .wavelet import approx_chain

RESOLUTION = 128
_WAVELET_WORK_SIZE = 256

CHANNELS_FIVE = ("original", "previous", "next", "approx1", "approx2")
CHANNELS_THREE = ("original", "previous", "next")

DEFAULT_CROP_MARGIN = 10

ROTATION_MIN_DEG = 5.0
ROTATION_MAX_DEG = 20.0


@dataclass(frozen=True)
class CropWindow:
    """Fixed rectangle in original slice coordinates, applied identically to
    every volume of a run."""

    row0: int
    col0: int
    height: int
    width: int

    def validate(self, slice_size: int) -> None:
        if self.row0 < 0 or self.col0 < 0 or self.height < 2 or self.width < 2:
            raise ValueError(f"degenerate crop window {self}")
        if self.height % 2 or self.width % 2:
            raise ValueError(f"crop window sides must be even, got {self}")
        if self.row0 + self.height > slice_size or self.col0 + self.width > slice_size:
            raise ValueError(f"crop window {self} exceeds slice size {slice_size}")

    def apply(self, image: np.ndarray) -> np.ndarray:
        return image[self.row0 : self.row0 + self.height, self.col0 : self.col0 + self.width]


@dataclass
class Instance:
    """One model-ready sample: (128, 128, C) float32 features and a binary mask."""

    features: np.ndarray
    mask: np.ndarray
    channel_order: tuple[str, ...]
    slice_id: str = ""


@dataclass(frozen=True)
class FoldSplit:
    folds: tuple[frozenset[str], ...]

    def __post_init__(self):
        all_ids: set[str] = set()
        for fold in self.folds:
            if all_ids & fold:
                raise ValueError("folds overlap")
            all_ids |= fold
        sizes = [len(f) for f in self.folds]
        if sizes and max(sizes) - min(sizes) > 1:
            raise ValueError(f"fold sizes {sizes} differ by more than one")

    def holdout(self, index: int) -> frozenset[str]:
        return self.folds[index]

    def training(self, holdout_index: int) -> frozenset[str]:
        out: set[str] = set()
        for i, fold in enumerate(self.folds):
            if i != holdout_index:
                out |= fold
        return frozenset(out)


def normalize_intensity(slice_array: np.ndarray, manufacturer: str) -> np.ndarray:
    """Linear map of the manufacturer's raw range onto [0, 1], clamped."""
    if manufacturer not in MANUFACTURER_RANGES:
        raise ValueError(f"unknown manufacturer {manufacturer!r}")
    lo, hi = MANUFACTURER_RANGES[manufacturer]
    scaled = (np.asarray(slice_array, dtype=np.float64) - lo) / (hi - lo)
    return np.clip(scaled, 0.0, 1.0)


def compute_crop_window(training_masks, margin: int = DEFAULT_CROP_MARGIN) -> CropWindow:
    """Tight bounding box of all nonzero training-mask pixels, grown by
    ``margin``, clamped to the slice, and rounded up to even side lengths."""
    if margin < 0:
        raise ValueError("margin must be non-negative")
    stack = np.asarray(training_masks)
    if stack.ndim == 2:
        stack = stack[None]
    union = stack.any(axis=0)
    rows = np.flatnonzero(union.any(axis=1))
    cols = np.flatnonzero(union.any(axis=0))
    if rows.size == 0:
        raise ValueError("all training masks are empty; no crop window exists")
    h, w = union.shape

    def _bounds(first: int, last: int, limit: int) -> tuple[int, int]:
        a = max(0, first - margin)
        b = min(limit - 1, last + margin)
        if (b - a + 1) % 2:
            if b < limit - 1:
                b += 1
            else:
                a -= 1
        return a, b

    r0, r1 = _bounds(int(rows[0]), int(rows[-1]), h)
    c0, c1 = _bounds(int(cols[0]), int(cols[-1]), w)
    window = CropWindow(row0=r0, col0=c0, height=r1 - r0 + 1, width=c1 - c0 + 1)
    window.validate(h)
    return window


def _resize_bilinear(image: np.ndarray, size: int) -> np.ndarray:
    return cv2.resize(image, (size, size), interpolation=cv2.INTER_LINEAR)


def _resize_mask(mask: np.ndarray, size: int) -> np.ndarray:
    resized = cv2.resize(mask, (size, size), interpolation=cv2.INTER_NEAREST)
    return (resized > 0).astype(np.uint8)


def build_instance(
    volume: Volume,
    slice_index: int,
    window: CropWindow,
    channels: str = "five",
) -> Instance:
    """Assemble one instance from a volume slice and its neighbors."""
    if channels not in ("five", "three"):
        raise ValueError(f"channels must be 'five' or 'three', got {channels!r}")
    n = volume.n_slices
    if not 0 <= slice_index < n:
        raise ValueError(f"slice_index {slice_index} out of range [0, {n})")
    window.validate(volume.slice_size)

    def prepared(index: int) -> np.ndarray:
        return window.apply(normalize_intensity(volume.slices[index], volume.manufacturer))

    original = prepared(slice_index)
    previous = prepared(max(slice_index - 1, 0))
    following = prepared(min(slice_index + 1, n - 1))

    planes = [
        _resize_bilinear(original, RESOLUTION),
        _resize_bilinear(previous, RESOLUTION),
        _resize_bilinear(following, RESOLUTION),
    ]
    order = CHANNELS_THREE
    if channels == "five":
        work = _resize_bilinear(original, _WAVELET_WORK_SIZE)
        approx1, approx2 = approx_chain(work, levels=2)
        planes.append(approx1)
        planes.append(_resize_bilinear(approx2, RESOLUTION))
        order = CHANNELS_FIVE

    mask = _resize_mask(window.apply(volume.masks[slice_index]), RESOLUTION)
    features = np.stack(planes, axis=-1).astype(np.float32)
    return Instance(
        features=features,
        mask=mask,
        channel_order=order,
        slice_id=f"{volume.patient_id}_s{slice_index:03d}",
    )


def flip_instance(instance: Instance) -> Instance:
    """Mirror all channels and the mask left-to-right."""
    return Instance(
        features=instance.features[:, ::-1, :].copy(),
        mask=instance.mask[:, ::-1].copy(),
        channel_order=instance.channel_order,
        slice_id=instance.slice_id,
    )


def rotate_plane(plane: np.ndarray, angle_deg: float, *, nearest: bool = False) -> np.ndarray:
    """Rotate one 2D plane about the image center, zero-filling uncovered pixels."""
    h, w = plane.shape
    matrix = cv2.getRotationMatrix2D(((w - 1) / 2.0, (h - 1) / 2.0), angle_deg, 1.0)
    return cv2.warpAffine(
        np.ascontiguousarray(plane),
        matrix,
        (w, h),
        flags=cv2.INTER_NEAREST if nearest else cv2.INTER_LINEAR,
        borderMode=cv2.BORDER_CONSTANT,
        borderValue=0,
    )


def rotate_stack(stack: np.ndarray, angle_deg: float) -> np.ndarray:
    """Bilinear rotation applied per channel (the multi-channel warp path is
    less precise than the single-plane one)."""
    if stack.ndim == 2:
        return rotate_plane(stack, angle_deg)
    out = np.empty_like(stack)
    for channel in range(stack.shape[2]):
        out[:, :, channel] = rotate_plane(stack[:, :, channel], angle_deg)
    return out


def rotate_instance(instance: Instance, angle_deg: float) -> Instance:
    """Rotate all channels (bilinear) and the mask (nearest, re-binarized)."""
    mask = rotate_plane(instance.mask, angle_deg, nearest=True)
    return Instance(
        features=rotate_stack(instance.features, angle_deg).astype(np.float32),
        mask=(mask > 0).astype(np.uint8),
        channel_order=instance.channel_order,
        slice_id=instance.slice_id,
    )


def augment_pair(instance: Instance, rng: np.random.Generator) -> Instance:
    """One random transform: a horizontal flip with probability 0.5, otherwise
    a rotation by an angle drawn uniformly from [-20, -5] or [5, 20] degrees."""
    if rng.random() < 0.5:
        return flip_instance(instance)
    sign = 1.0 if rng.random() < 0.5 else -1.0
    angle = sign * rng.uniform(ROTATION_MIN_DEG, ROTATION_MAX_DEG)
    return rotate_instance(instance, angle)


def expand_training_set(instances: list[Instance], rng: np.random.Generator) -> list[Instance]:
    """Originals in order followed by one augmented copy per original."""
    return list(instances) + [augment_pair(inst, rng) for inst in instances]


def split_folds(patient_ids, k: int, seed: int) -> FoldSplit:
    """Seeded shuffle followed by round-robin assignment into k folds."""
    ids = [str(p) for p in patient_ids]
    if k < 1:
        raise ValueError("k must be positive")
    if k > len(ids):
        raise ValueError(f"cannot split {len(ids)} patients into {k} folds")
    if len(set(ids)) != len(ids):
        raise ValueError("patient ids must be unique")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(ids))
    folds: list[set[str]] = [set() for _ in range(k)]
    for position, index in enumerate(order):
        folds[position % k].add(ids[index])
    return FoldSplit(folds=tuple(frozenset(f) for f in folds))
