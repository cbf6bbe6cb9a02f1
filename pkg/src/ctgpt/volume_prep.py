"""CT volume ingestion and preprocessing.

Chain order: Hounsfield conversion -> clip -> trilinear resample -> crop/pad -> normalize.

CTVL file layout (little-endian)::

    b"CTVL"            magic
    u8                 version (1)
    3 x u32            dims (z, y, x)
    3 x f32            spacing in mm (z, y, x)
    f32, f32           rescale slope, intercept
    i16[z*y*x]         raw voxels, z-major
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence, Tuple

import numpy as np

from .errors import ArgumentError, ContractError, FormatError

MAGIC = b"CTVL"
VERSION = 1
_HEADER = struct.Struct("<4sB3I3f2f")

HU_MIN = -1000.0
HU_MAX = 200.0
FULL_SPACING = (1.5, 0.75, 0.75)
FULL_DIMS = (240, 480, 480)


def _f32(x: float) -> float:
    return float(np.float32(x))


@dataclass
class CtVolume:
    dims: Tuple[int, int, int]
    spacing_mm: Tuple[float, float, float]
    slope: float
    intercept: float
    voxels: np.ndarray
    id: str = ""

    def __post_init__(self):
        self.dims = tuple(int(d) for d in self.dims)
        if len(self.dims) != 3 or any(d <= 0 for d in self.dims):
            raise ArgumentError(f"dims must be three positive integers, got {self.dims}")
        if len(self.spacing_mm) != 3 or any(not s > 0 for s in self.spacing_mm):
            raise ArgumentError(f"spacing must be strictly positive, got {self.spacing_mm}")
        # header stores f32; keep in-memory values representable so round-trips are exact
        self.spacing_mm = tuple(_f32(s) for s in self.spacing_mm)
        self.slope = _f32(self.slope)
        self.intercept = _f32(self.intercept)
        vox = np.asarray(self.voxels)
        if vox.size != int(np.prod(self.dims)):
            raise ArgumentError(f"{vox.size} voxels do not fill dims {self.dims}")
        self.voxels = vox.astype(np.int16, copy=False).reshape(self.dims)


@dataclass
class PreparedVolume:
    values: np.ndarray
    source_id: str = ""
    dims: Tuple[int, int, int] = field(init=False)

    def __post_init__(self):
        self.dims = tuple(self.values.shape)


@dataclass(frozen=True)
class PrepConfig:
    target_spacing: Tuple[float, float, float] = FULL_SPACING
    target_dims: Tuple[int, int, int] = FULL_DIMS
    hu_min: float = HU_MIN
    hu_max: float = HU_MAX


# I/O ----------------------------------------------------------------------

def encode_ctvol(v: CtVolume) -> bytes:
    header = _HEADER.pack(MAGIC, VERSION, *v.dims, *v.spacing_mm, v.slope, v.intercept)
    return header + np.ascontiguousarray(v.voxels, dtype="<i2").tobytes()


def decode_ctvol(buf: bytes, id: str = "") -> CtVolume:
    if len(buf) < _HEADER.size:
        raise FormatError("CTVL header truncated")
    magic, version, z, y, x, sz, sy, sx, slope, intercept = _HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise FormatError(f"unsupported CTVL version {version}")
    n = z * y * x
    payload = len(buf) - _HEADER.size
    if payload != 2 * n:
        raise FormatError(f"header dims {(z, y, x)} need {n} voxels, payload holds {payload / 2:g}")
    voxels = np.frombuffer(buf, dtype="<i2", count=n, offset=_HEADER.size).astype(np.int16)
    try:
        return CtVolume((z, y, x), (sz, sy, sx), slope, intercept, voxels, id=id)
    except ArgumentError as exc:
        raise FormatError(str(exc)) from exc


def write_ctvol(v: CtVolume, path) -> None:
    Path(path).write_bytes(encode_ctvol(v))


def read_ctvol(path) -> CtVolume:
    path = Path(path)
    return decode_ctvol(path.read_bytes(), id=path.stem)


# chain ----------------------------------------------------------------------

def to_hounsfield(v: CtVolume) -> np.ndarray:
    return v.voxels.astype(np.float64) * v.slope + v.intercept


def clip_hu(field: np.ndarray, lo: float = HU_MIN, hi: float = HU_MAX) -> np.ndarray:
    return np.clip(field, lo, hi)


def resampled_dims(dims: Sequence[int], src_spacing, dst_spacing) -> Tuple[int, ...]:
    return tuple(max(1, int(round(n * s / d))) for n, s, d in zip(dims, src_spacing, dst_spacing))


def _interp_axis(field: np.ndarray, axis: int, n_out: int, ratio: float) -> np.ndarray:
    # cell-centred mapping: output sample i sits at source index (i + 0.5) * ratio - 0.5
    n_in = field.shape[axis]
    coords = np.clip((np.arange(n_out) + 0.5) * ratio - 0.5, 0.0, n_in - 1)
    i0 = np.floor(coords).astype(np.int64)
    i1 = np.minimum(i0 + 1, n_in - 1)
    w = coords - i0
    shape = [1] * field.ndim
    shape[axis] = n_out
    w = w.reshape(shape).astype(field.dtype)
    a = np.take(field, i0, axis=axis)
    b = np.take(field, i1, axis=axis)
    return a + w * (b - a)


def resample_trilinear(
    field: np.ndarray,
    src_spacing: Sequence[float],
    dst_spacing: Sequence[float] = FULL_SPACING,
) -> np.ndarray:
    """Resample to ``dst_spacing`` over the same physical extent.

    Trilinear interpolation is applied as three separable linear passes, which
    is algebraically identical to weighting the 8 surrounding voxels.
    Coordinates beyond the source extent clamp to the edge voxel.
    """
    if len(src_spacing) != 3 or len(dst_spacing) != 3:
        raise ArgumentError("spacings must have three components")
    if any(not s > 0 for s in src_spacing) or any(not d > 0 for d in dst_spacing):
        raise ArgumentError(f"spacings must be positive: {src_spacing} -> {dst_spacing}")
    out_dims = resampled_dims(field.shape, src_spacing, dst_spacing)
    out = field
    for axis in range(3):
        if out_dims[axis] == field.shape[axis] and src_spacing[axis] == dst_spacing[axis]:
            continue
        out = _interp_axis(out, axis, out_dims[axis], dst_spacing[axis] / src_spacing[axis])
    if out is field:
        return field.copy()
    # convex combinations cannot leave the source range; clip away rounding
    return np.clip(out, field.min(), field.max())


def crop_or_pad(field: np.ndarray, target: Sequence[int] = FULL_DIMS, fill: float = HU_MIN) -> np.ndarray:
    """Centre-crop oversized axes and pad undersized ones with ``fill``.

    Odd remainders go to the high-index side for both cropping and padding.
    """
    target = tuple(int(t) for t in target)
    if field.shape == target:
        return field.copy()
    crop = []
    pads = []
    for n, t in zip(field.shape, target):
        if n >= t:
            start = (n - t) // 2
            crop.append(slice(start, start + t))
            pads.append((0, 0))
        else:
            crop.append(slice(None))
            p = t - n
            pads.append((p // 2, p - p // 2))
    out = field[tuple(crop)]
    if any(p != (0, 0) for p in pads):
        out = np.pad(out, pads, mode="constant", constant_values=fill)
    return np.ascontiguousarray(out)


def normalize(field: np.ndarray, lo: float = HU_MIN, hi: float = HU_MAX) -> np.ndarray:
    """Affine map [lo, hi] -> [-1, 1]; values outside the clip range are a contract violation."""
    if field.size and (field.min() < lo or field.max() > hi):
        raise ContractError(f"values [{field.min()}, {field.max()}] outside clip range [{lo}, {hi}]")
    half = (hi - lo) / 2.0
    return (field - lo) / half - 1.0


def denormalize(values: np.ndarray, lo: float = HU_MIN, hi: float = HU_MAX) -> np.ndarray:
    return (values + 1.0) * ((hi - lo) / 2.0) + lo


def prepare_field(field_hu: np.ndarray, spacing_mm, cfg: PrepConfig = PrepConfig()) -> np.ndarray:
    """HU field -> normalized float32 array at ``cfg.target_dims``."""
    clipped = clip_hu(np.asarray(field_hu, dtype=np.float64), cfg.hu_min, cfg.hu_max)
    resampled = resample_trilinear(clipped, spacing_mm, cfg.target_spacing)
    fitted = crop_or_pad(resampled, cfg.target_dims, fill=cfg.hu_min)
    return normalize(fitted, cfg.hu_min, cfg.hu_max).astype(np.float32)


def prepare_volume(v: CtVolume, cfg: PrepConfig = PrepConfig()) -> PreparedVolume:
    return PreparedVolume(prepare_field(to_hounsfield(v), v.spacing_mm, cfg), source_id=v.id)
