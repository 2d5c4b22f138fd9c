"""Bit-exact on-disk formats. This is the only module that touches persistent storage.

Patient directory (one per patient):

    manifest.txt   key=value lines: patient_id, manufacturer, slice_count, slice_size
    slices.raw     16-bit signed little-endian intensities, slice-major row-major
    masks.raw      8-bit {0,1} masks, same ordering

Weights container (``.lseg``), all integers little-endian:

    magic  b"LSEG"
    u32    version (currently 1)
    u32    entry count
    entry: u32 name length, utf-8 name, u32 ndim, ndim x u32 dims,
           prod(dims) x float32 values (row-major)
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MANUFACTURER_RANGES: dict[str, tuple[int, int]] = {
    "CMS": (-1024, 3071),
    "SIEMENS": (0, 4095),
}

WEIGHTS_MAGIC = b"LSEG"
WEIGHTS_VERSION = 1

_MANIFEST_NAME = "manifest.txt"
_SLICES_NAME = "slices.raw"
_MASKS_NAME = "masks.raw"


class FormatError(ValueError):
    """Malformed, inconsistent, or out-of-contract persistent data."""


@dataclass
class Volume:
    """Ordered stack of intensity slices and ground-truth masks for one patient."""

    patient_id: str
    manufacturer: str
    slices: np.ndarray = field(repr=False)  # (n, size, size) int16
    masks: np.ndarray = field(repr=False)   # (n, size, size) uint8 in {0, 1}

    def __post_init__(self):
        self.slices = np.asarray(self.slices, dtype=np.int16)
        self.masks = np.asarray(self.masks, dtype=np.uint8)
        self.validate()

    @property
    def n_slices(self) -> int:
        return self.slices.shape[0]

    @property
    def slice_size(self) -> int:
        return self.slices.shape[1]

    def validate(self) -> None:
        if self.manufacturer not in MANUFACTURER_RANGES:
            raise FormatError(f"unknown manufacturer {self.manufacturer!r}")
        if self.slices.ndim != 3 or self.masks.ndim != 3:
            raise FormatError("slices and masks must be (n, size, size) stacks")
        if self.slices.shape != self.masks.shape:
            raise FormatError(
                f"slices {self.slices.shape} and masks {self.masks.shape} disagree"
            )
        n, h, w = self.slices.shape
        if n < 1:
            raise FormatError("a volume needs at least one slice")
        if h != w:
            raise FormatError(f"slices must be square, got {h}x{w}")
        lo, hi = MANUFACTURER_RANGES[self.manufacturer]
        smin, smax = int(self.slices.min()), int(self.slices.max())
        if smin < lo or smax > hi:
            raise FormatError(
                f"intensities [{smin}, {smax}] outside the {self.manufacturer} "
                f"range [{lo}, {hi}]"
            )
        bad = np.setdiff1d(np.unique(self.masks), [0, 1])
        if bad.size:
            raise FormatError(f"masks must be binary, found values {bad.tolist()}")


def write_volume(volume: Volume, dir_path) -> None:
    """Write one patient directory; any existing payload files are replaced."""
    volume.validate()
    d = Path(dir_path)
    d.mkdir(parents=True, exist_ok=True)
    manifest = (
        f"patient_id={volume.patient_id}\n"
        f"manufacturer={volume.manufacturer}\n"
        f"slice_count={volume.n_slices}\n"
        f"slice_size={volume.slice_size}\n"
    )
    (d / _MANIFEST_NAME).write_text(manifest, encoding="utf-8")
    volume.slices.astype("<i2").tofile(d / _SLICES_NAME)
    volume.masks.astype("u1").tofile(d / _MASKS_NAME)


def _parse_manifest(path: Path) -> dict[str, str]:
    pairs: dict[str, str] = {}
    for line in path.read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"manifest line without '=': {line!r}")
        key, value = line.split("=", 1)
        pairs[key.strip()] = value.strip()
    for key in ("patient_id", "manufacturer", "slice_count", "slice_size"):
        if key not in pairs:
            raise FormatError(f"manifest missing key {key!r}")
    return pairs


def read_volume(dir_path) -> Volume:
    """Read one patient directory, verifying sizes and intensity ranges."""
    d = Path(dir_path)
    for name in (_MANIFEST_NAME, _SLICES_NAME, _MASKS_NAME):
        if not (d / name).is_file():
            raise FileNotFoundError(d / name)
    meta = _parse_manifest(d / _MANIFEST_NAME)
    try:
        count = int(meta["slice_count"])
        size = int(meta["slice_size"])
    except ValueError as exc:
        raise FormatError(f"non-integer manifest field: {exc}") from exc
    if count < 1 or size < 1:
        raise FormatError("slice_count and slice_size must be positive")

    expected = count * size * size
    raw = np.fromfile(d / _SLICES_NAME, dtype="<i2")
    if raw.size != expected:
        raise FormatError(
            f"slices.raw holds {raw.size} values, manifest implies {expected}"
        )
    masks = np.fromfile(d / _MASKS_NAME, dtype="u1")
    if masks.size != expected:
        raise FormatError(
            f"masks.raw holds {masks.size} values, manifest implies {expected}"
        )
    return Volume(
        patient_id=meta["patient_id"],
        manufacturer=meta["manufacturer"],
        slices=raw.reshape(count, size, size),
        masks=masks.reshape(count, size, size),
    )


def save_weights(graph, path) -> None:
    """Serialize a graph's full array inventory (parameters and running statistics)."""
    entries = graph.named_arrays()
    with open(path, "wb") as f:
        f.write(WEIGHTS_MAGIC)
        f.write(struct.pack("<II", WEIGHTS_VERSION, len(entries)))
        for name, arr in entries.items():
            encoded = name.encode("utf-8")
            data = np.ascontiguousarray(arr, dtype="<f4")
            f.write(struct.pack("<I", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<I", data.ndim))
            f.write(struct.pack(f"<{data.ndim}I", *data.shape))
            f.write(data.tobytes())


def _read_exact(f, n: int) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise FormatError("weights file truncated")
    return buf


def load_weights(path, graph) -> None:
    """Restore a graph's arrays from ``path``.

    The file's entry names and dims must match the graph's inventory exactly;
    on any mismatch the graph is left untouched.
    """
    with open(path, "rb") as f:
        if _read_exact(f, 4) != WEIGHTS_MAGIC:
            raise FormatError("bad magic, not a LSEG weights file")
        version, count = struct.unpack("<II", _read_exact(f, 8))
        if version != WEIGHTS_VERSION:
            raise FormatError(f"unsupported weights version {version}")
        loaded: dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<I", _read_exact(f, 4))
            name = _read_exact(f, name_len).decode("utf-8")
            if name in loaded:
                raise FormatError(f"duplicate entry {name!r}")
            (ndim,) = struct.unpack("<I", _read_exact(f, 4))
            dims = struct.unpack(f"<{ndim}I", _read_exact(f, 4 * ndim))
            n_values = int(np.prod(dims, dtype=np.int64)) if ndim else 1
            data = np.frombuffer(_read_exact(f, 4 * n_values), dtype="<f4")
            loaded[name] = data.reshape(dims)
        if f.read(1):
            raise FormatError("trailing bytes after the declared entries")

    inventory = graph.named_arrays()
    if set(loaded) != set(inventory):
        missing = sorted(set(inventory) - set(loaded))
        extra = sorted(set(loaded) - set(inventory))
        raise FormatError(
            f"inventory mismatch: missing={missing[:4]} extra={extra[:4]} "
            f"(file has {len(loaded)} entries, graph has {len(inventory)})"
        )
    for name, arr in inventory.items():
        if tuple(loaded[name].shape) != tuple(arr.shape):
            raise FormatError(
                f"entry {name!r} has dims {loaded[name].shape}, graph expects {arr.shape}"
            )
    for name, arr in inventory.items():
        arr[...] = loaded[name].astype(arr.dtype)
