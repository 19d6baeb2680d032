"""Volumes, mask sets and measurement sets, plus their binary file formats.

All three formats are little-endian with a 4-byte magic and a version byte:

* ``CSLV`` volume: ``nx, ny, nz`` (u32) then ``nx*ny*nz`` float32 voxels,
  slice-major (z outer), row-major within a slice.
* ``CSLM`` masks: ``R, nx, ny`` (u32), ``seed`` (u64), then ``R*nx*ny`` bytes
  each 0 or 1.
* ``CSLB`` measurements: ``N, nx, ny, R`` (u32), ``noise_variance`` (f64),
  ``noise_seed, mask_seed`` (u64), then ``N*nx*ny`` float32 values.

Arrays are stored in memory as ``(depth, ny, nx)`` so that ``data[k]`` is one
contiguous slice.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    BadMagicError,
    ConfigError,
    FileFormatError,
    InvalidMaskError,
    NonFiniteError,
    StorageError,
    TruncatedError,
    UnsupportedVersionError,
)

VERSION = 1
VOLUME_MAGIC = b"CSLV"
MASK_MAGIC = b"CSLM"
MEAS_MAGIC = b"CSLB"

_VOLUME_HEADER = struct.Struct("<4sBIII")
_MASK_HEADER = struct.Struct("<4sBIIIQ")
_MEAS_HEADER = struct.Struct("<4sBIIIIdQQ")


def _frozen(arr, dtype):
    out = np.array(arr, dtype=dtype, copy=True, order="C")
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class Volume:
    """A stack of real-valued slices with shape ``(nz, ny, nx)``."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3:
            raise ConfigError(f"volume must be 3-D (nz, ny, nx), got shape {data.shape}")
        with np.errstate(over="ignore"):
            stored = _frozen(data, np.float32)
        # checked after the cast so float32 overflow is caught too
        if not np.all(np.isfinite(stored)):
            raise NonFiniteError("volume contains non-finite voxels")
        object.__setattr__(self, "data", stored)

    @property
    def nz(self):
        return self.data.shape[0]

    @property
    def ny(self):
        return self.data.shape[1]

    @property
    def nx(self):
        return self.data.shape[2]

    def slice(self, n):
        """Slice by 1-based index ``n``."""
        if not 1 <= n <= self.nz:
            raise IndexError(f"slice index {n} outside 1..{self.nz}")
        return self.data[n - 1]

    def __eq__(self, other):
        if not isinstance(other, Volume):
            return NotImplemented
        return self.data.shape == other.data.shape and np.array_equal(
            self.data.view(np.uint32), other.data.view(np.uint32)
        )


@dataclass(frozen=True, eq=False)
class MaskSet:
    """``R`` binary masks shared by every shot, shape ``(R, ny, nx)``."""

    masks: np.ndarray
    seed: int = 0

    def __post_init__(self):
        m = np.asarray(self.masks)
        if m.ndim != 3:
            raise ConfigError(f"mask set must be 3-D (R, ny, nx), got shape {m.shape}")
        if not np.all((m == 0) | (m == 1)):
            raise InvalidMaskError("mask entries must be 0 or 1")
        object.__setattr__(self, "masks", _frozen(m, np.uint8))
        object.__setattr__(self, "seed", int(self.seed))

    @property
    def count(self):
        return self.masks.shape[0]

    @property
    def ny(self):
        return self.masks.shape[1]

    @property
    def nx(self):
        return self.masks.shape[2]

    def __eq__(self, other):
        if not isinstance(other, MaskSet):
            return NotImplemented
        return self.seed == other.seed and np.array_equal(self.masks, other.masks)


@dataclass(frozen=True, eq=False)
class MeasurementSet:
    """``N`` compressed shots ``b_j`` with acquisition metadata."""

    data: np.ndarray
    compression_ratio: int
    noise_variance: float = 0.0
    noise_seed: int = 0
    mask_seed: int = 0

    def __post_init__(self):
        d = np.asarray(self.data)
        if d.ndim != 3:
            raise ConfigError(f"measurements must be 3-D (N, ny, nx), got shape {d.shape}")
        with np.errstate(over="ignore"):
            stored = _frozen(d, np.float32)
        if not np.all(np.isfinite(stored)):
            raise NonFiniteError("measurements contain non-finite values")
        if self.compression_ratio < 1:
            raise ConfigError("compression ratio must be >= 1")
        if not self.noise_variance >= 0:
            raise ConfigError("noise variance must be >= 0")
        object.__setattr__(self, "data", stored)
        object.__setattr__(self, "compression_ratio", int(self.compression_ratio))
        object.__setattr__(self, "noise_variance", float(self.noise_variance))

    @property
    def shots(self):
        return self.data.shape[0]

    @property
    def ny(self):
        return self.data.shape[1]

    @property
    def nx(self):
        return self.data.shape[2]

    def __eq__(self, other):
        if not isinstance(other, MeasurementSet):
            return NotImplemented
        return (
            self.compression_ratio == other.compression_ratio
            and self.noise_variance == other.noise_variance
            and self.noise_seed == other.noise_seed
            and self.mask_seed == other.mask_seed
            and self.data.shape == other.data.shape
            and np.array_equal(self.data.view(np.uint32), other.data.view(np.uint32))
        )


def shot_index(n, ratio):
    """Map 1-based slice index ``n`` to ``(j, r)``, both 1-based."""
    j = math.ceil(n / ratio)
    return j, n - (j - 1) * ratio


def slice_index(j, r, ratio):
    return (j - 1) * ratio + r


# -- file I/O -----------------------------------------------------------------


def _write_bytes(path, header, payload):
    path = Path(path)
    try:
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(payload)
    except OSError as exc:
        raise StorageError(f"cannot write {path}: {exc.strerror or exc}") from exc


def _read_bytes(path):
    path = Path(path)
    try:
        return path.read_bytes()
    except OSError as exc:
        raise StorageError(f"cannot read {path}: {exc.strerror or exc}") from exc


def _unpack_header(raw, fmt, magic, path):
    if len(raw) < 5:
        if raw[:4] != magic[: len(raw[:4])]:
            raise BadMagicError(f"{path}: bad magic {raw[:4]!r}")
        raise TruncatedError(f"{path}: file too short for header")
    if raw[:4] != magic:
        raise BadMagicError(f"{path}: expected magic {magic!r}, found {raw[:4]!r}")
    if raw[4] != VERSION:
        raise UnsupportedVersionError(f"{path}: unsupported version {raw[4]}")
    if len(raw) < fmt.size:
        raise TruncatedError(f"{path}: file too short for header")
    return fmt.unpack_from(raw)[2:]


def _payload(raw, offset, nbytes, path):
    have = len(raw) - offset
    if have < nbytes:
        raise TruncatedError(f"{path}: payload has {have} bytes, header implies {nbytes}")
    if have > nbytes:
        raise FileFormatError(f"{path}: {have - nbytes} trailing bytes after payload")
    return raw[offset:]


def write_volume(v, path):
    if not np.all(np.isfinite(v.data)):
        raise NonFiniteError(f"refusing to write non-finite voxels to {path}")
    header = _VOLUME_HEADER.pack(VOLUME_MAGIC, VERSION, v.nx, v.ny, v.nz)
    _write_bytes(path, header, v.data.astype("<f4").tobytes())


def read_volume(path):
    raw = _read_bytes(path)
    nx, ny, nz = _unpack_header(raw, _VOLUME_HEADER, VOLUME_MAGIC, path)
    body = _payload(raw, _VOLUME_HEADER.size, 4 * nx * ny * nz, path)
    data = np.frombuffer(body, dtype="<f4").reshape(nz, ny, nx)
    return Volume(data)


def write_masks(m, path):
    header = _MASK_HEADER.pack(MASK_MAGIC, VERSION, m.count, m.nx, m.ny, m.seed)
    _write_bytes(path, header, m.masks.tobytes())


def read_masks(path):
    raw = _read_bytes(path)
    count, nx, ny, seed = _unpack_header(raw, _MASK_HEADER, MASK_MAGIC, path)
    body = _payload(raw, _MASK_HEADER.size, count * nx * ny, path)
    masks = np.frombuffer(body, dtype=np.uint8).reshape(count, ny, nx)
    if masks.size and masks.max() > 1:
        raise InvalidMaskError(f"{path}: mask byte {int(masks.max()):#04x} is not 0 or 1")
    return MaskSet(masks, seed=seed)


def write_measurements(ms, path):
    header = _MEAS_HEADER.pack(
        MEAS_MAGIC, VERSION, ms.shots, ms.nx, ms.ny, ms.compression_ratio,
        ms.noise_variance, ms.noise_seed, ms.mask_seed,
    )
    _write_bytes(path, header, ms.data.astype("<f4").tobytes())


def read_measurements(path):
    raw = _read_bytes(path)
    shots, nx, ny, ratio, var, noise_seed, mask_seed = _unpack_header(
        raw, _MEAS_HEADER, MEAS_MAGIC, path
    )
    body = _payload(raw, _MEAS_HEADER.size, 4 * shots * nx * ny, path)
    data = np.frombuffer(body, dtype="<f4").reshape(shots, ny, nx)
    return MeasurementSet(data, ratio, var, noise_seed, mask_seed)


def export_slice_pgm(s, path):
    """Write a 2-D slice as a 16-bit binary PGM, mapping [0, 1] to [0, 65535]."""
    s = np.asarray(s, dtype=np.float64)
    if s.ndim != 2:
        raise ConfigError(f"expected a 2-D slice, got shape {s.shape}")
    ny, nx = s.shape
    t = np.clip(np.nan_to_num(s, nan=0.0), 0.0, 1.0)
    # round-half-up so 0.5 -> 32768
    samples = np.floor(t * 65535 + 0.5).astype(">u2")
    header = f"P5\n{nx} {ny}\n65535\n".encode("ascii")
    _write_bytes(path, header, samples.tobytes())
