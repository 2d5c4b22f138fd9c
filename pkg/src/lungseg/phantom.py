"""Deterministic synthetic CT volumes for exercising the full pipeline.

Each patient volume carries a scanner manufacturer tag with its own raw
intensity range, a smoothly varying background ("anatomy" built from a few
low-frequency sine waves plus Gaussian noise) and a small number of bright
tumors. A tumor is an axis-aligned ellipse at a fixed integer center that
persists over a contiguous run of slices, with its radii modulated slice to
slice; masks are exactly the lattice sets of those ellipses. Generation is a
pure function of (spec, patient_index).
"""

from __future__ import annotations

import shutil
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .datastore import MANUFACTURER_RANGES, Volume, write_volume

_TUMOR_BOOST = 0.10
_BACKGROUND_BASE = 0.35
_BACKGROUND_TEXTURE = 0.30


@dataclass(frozen=True)
class PhantomSpec:
    """Dataset-level knobs; defaults give a small, mildly imbalanced dataset
    (roughly one tumor-bearing slice in seven)."""

    n_patients: int = 8
    slices_per_patient: int = 16
    slice_size: int = 512
    manufacturer_split: float = 0.25  # fraction of patients tagged CMS
    tumor_probability: float = 0.14   # fraction of slices containing a tumor
    tumor_radius_range: tuple[float, float] = (12.0, 40.0)
    noise_sigma: float = 0.03         # Gaussian noise, normalized [0,1] units
    seed: int = 42

    def validate(self) -> None:
        if self.n_patients < 1 or self.slices_per_patient < 1 or self.slice_size < 1:
            raise ValueError("n_patients, slices_per_patient, slice_size must be positive")
        if not 0.0 <= self.manufacturer_split <= 1.0:
            raise ValueError("manufacturer_split must lie in [0, 1]")
        if not 0.0 <= self.tumor_probability <= 1.0:
            raise ValueError("tumor_probability must lie in [0, 1]")
        rmin, rmax = self.tumor_radius_range
        if not 0 < rmin <= rmax:
            raise ValueError("tumor_radius_range must satisfy 0 < min <= max")
        if rmax >= self.slice_size / 4:
            raise ValueError(
                f"tumor_radius_range max {rmax} must stay below slice_size/4 "
                f"= {self.slice_size / 4}"
            )
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")


@dataclass(frozen=True)
class DatasetSummary:
    patients: int
    tumor_slices: int
    non_tumor_slices: int

    @property
    def total_slices(self) -> int:
        return self.tumor_slices + self.non_tumor_slices


def _plan_span_lengths(rng: np.random.Generator, n_slices: int, tumor_probability: float) -> list[int]:
    """Tumor run lengths summing to ~tumor_probability * n_slices, each >= 2
    whenever the volume has room for that."""
    target = int(round(tumor_probability * n_slices))
    if target == 0:
        return []
    if n_slices >= 3:
        target = max(target, 2)
    target = min(target, n_slices)
    lengths: list[int] = []
    remaining = target
    while remaining > 0:
        if remaining <= 3:
            length = remaining
        else:
            length = int(rng.integers(2, 5))
            if remaining - length == 1:
                length += 1
        lengths.append(min(length, remaining))
        remaining -= lengths[-1]
    return lengths


def _place_spans(rng: np.random.Generator, n_slices: int, lengths: list[int]) -> list[tuple[int, int]]:
    spans: list[tuple[int, int]] = []
    cursor = 0
    for i, length in enumerate(lengths):
        room = n_slices - cursor - sum(lengths[i:])
        gap = int(rng.integers(0, room + 1)) if room > 0 else 0
        cursor += gap
        spans.append((cursor, length))
        cursor += length
    return spans


def _background(rng: np.random.Generator, size: int) -> np.ndarray:
    """Per-patient anatomy in normalized units: low-frequency sinusoids plus a
    fixed fine-grained texture field.

    The texture is constant across a patient's slices, so neighbor-slice
    context cannot average it away while spatial low-pass analysis can.
    """
    coords = np.arange(size, dtype=np.float64) / size
    yy, xx = np.meshgrid(coords, coords, indexing="ij")
    freq = rng.uniform(1.5, 4.0, size=3)
    phase = rng.uniform(0.0, 2 * np.pi, size=3)
    img = _BACKGROUND_BASE
    img = img + 0.10 * np.sin(2 * np.pi * freq[0] * yy + phase[0]) * np.sin(
        2 * np.pi * freq[1] * xx + phase[1]
    )
    img = img + 0.05 * np.sin(2 * np.pi * freq[2] * (xx + yy) + phase[2])
    return img + _BACKGROUND_TEXTURE * rng.standard_normal((size, size))


def manufacturer_for(spec: PhantomSpec, patient_index: int) -> str:
    """First round(split * n) patients are CMS, the rest SIEMENS."""
    n_cms = int(round(spec.manufacturer_split * spec.n_patients))
    return "CMS" if patient_index < n_cms else "SIEMENS"


def ellipse_mask(size: int, center: tuple[int, int], radii: tuple[float, float]) -> np.ndarray:
    """Lattice set of ((i-cy)/ry)^2 + ((j-cx)/rx)^2 <= 1 as a uint8 mask."""
    cy, cx = center
    ry, rx = radii
    ii = np.arange(size, dtype=np.float64)[:, None]
    jj = np.arange(size, dtype=np.float64)[None, :]
    inside = ((ii - cy) / ry) ** 2 + ((jj - cx) / rx) ** 2 <= 1.0
    return inside.astype(np.uint8)


def generate_volume(spec: PhantomSpec, patient_index: int) -> Volume:
    """Build one patient volume; bit-identical for identical (spec, patient_index)."""
    spec.validate()
    if not 0 <= patient_index < spec.n_patients:
        raise ValueError(
            f"patient_index {patient_index} out of range [0, {spec.n_patients})"
        )
    rng = np.random.default_rng((spec.seed, patient_index))
    size = spec.slices_per_patient
    s = spec.slice_size
    rmin, rmax = spec.tumor_radius_range

    lengths = _plan_span_lengths(rng, size, spec.tumor_probability)
    spans = _place_spans(rng, size, lengths)

    # One fixed integer center and base radius pair per tumor; per-slice radii
    # breathe by +-20% but never leave the configured range.
    margin = int(np.ceil(rmax))
    lo_c = s // 4 + margin
    hi_c = 3 * s // 4 - 1 - margin
    tumors = []
    for start, length in spans:
        center = (int(rng.integers(lo_c, hi_c + 1)), int(rng.integers(lo_c, hi_c + 1)))
        base = (float(rng.uniform(rmin, rmax)), float(rng.uniform(rmin, rmax)))
        scales = rng.uniform(0.8, 1.2, size=length)
        tumors.append((start, length, center, base, scales))

    background = _background(rng, s)
    lo, hi = MANUFACTURER_RANGES[manufacturer_for(spec, patient_index)]
    slices = np.empty((size, s, s), dtype=np.int16)
    masks = np.zeros((size, s, s), dtype=np.uint8)

    for idx in range(size):
        norm = background.copy()
        for start, length, center, base, scales in tumors:
            if not start <= idx < start + length:
                continue
            scale = scales[idx - start]
            radii = (
                float(np.clip(base[0] * scale, rmin, rmax)),
                float(np.clip(base[1] * scale, rmin, rmax)),
            )
            mask = ellipse_mask(s, center, radii)
            masks[idx] |= mask
            norm = norm + _TUMOR_BOOST * mask
        if spec.noise_sigma > 0:
            norm = norm + rng.normal(0.0, spec.noise_sigma, size=(s, s))
        raw = np.rint(lo + np.clip(norm, 0.0, 1.0) * (hi - lo))
        slices[idx] = np.clip(raw, lo, hi).astype(np.int16)

    return Volume(
        patient_id=f"patient_{patient_index:03d}",
        manufacturer=manufacturer_for(spec, patient_index),
        slices=slices,
        masks=masks,
    )


def generate_dataset(spec: PhantomSpec, out_path) -> DatasetSummary:
    """Write one patient directory per patient under ``out_path``.

    A patient directory that fails mid-write is removed before the error
    propagates.
    """
    spec.validate()
    out = Path(out_path)
    out.mkdir(parents=True, exist_ok=True)
    tumor = 0
    non_tumor = 0
    for index in range(spec.n_patients):
        volume = generate_volume(spec, index)
        patient_dir = out / volume.patient_id
        try:
            write_volume(volume, patient_dir)
        except BaseException:
            shutil.rmtree(patient_dir, ignore_errors=True)
            raise
        has_tumor = volume.masks.reshape(volume.n_slices, -1).any(axis=1)
        tumor += int(has_tumor.sum())
        non_tumor += int(volume.n_slices - has_tumor.sum())
    return DatasetSummary(patients=spec.n_patients, tumor_slices=tumor, non_tumor_slices=non_tumor)
