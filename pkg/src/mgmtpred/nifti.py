"""NIFTI-1 volume and label-mask I/O, plus tumor region derivation.

Only single-file NIFTI-1 images (``.nii`` / ``.nii.gz``) with three spatial
dimensions are accepted.  Volumes are assumed to be co-registered already;
the affine is parsed and kept for reference but never used to resample.
"""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

MODALITIES = ("t1", "t1ce", "t2", "flair")
REGIONS = ("whole", "core", "enh")
LABEL_CODES = (0, 1, 2, 4)

HEADER_SIZE = 348
# Minimal single-file layout: header + 4-byte (empty) extension flag.
DEFAULT_VOX_OFFSET = 352

# NIFTI datatype code -> numpy dtype character
_DATATYPES = {
    2: "u1",
    4: "i2",
    8: "i4",
    16: "f4",
    64: "f8",
    512: "u2",
}
_DTYPE_CODES = {np.dtype(v).str[1:]: k for k, v in _DATATYPES.items()}

_OFF_DIM = 40
_OFF_DATATYPE = 70
_OFF_BITPIX = 72
_OFF_PIXDIM = 76
_OFF_VOX_OFFSET = 108
_OFF_SCL_SLOPE = 112
_OFF_SCL_INTER = 116
_OFF_QFORM_CODE = 252
_OFF_SFORM_CODE = 254
_OFF_QUATERN = 256
_OFF_SROW = 280
_OFF_MAGIC = 344


class NiftiError(ValueError):
    """Malformed or unsupported NIFTI-1 input.

    ``offset`` is the byte offset (in the decompressed stream) of the field
    that failed validation.
    """

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class LabelError(ValueError):
    """Label mask contains codes outside {0, 1, 2, 4}."""


class ShapeMismatchError(ValueError):
    """Volumes/masks that must share a grid do not."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Volume:
    """A 3D intensity grid.  ``data`` is flat in x-fastest (Fortran) order."""

    dims: tuple[int, int, int]
    spacing: tuple[float, float, float]
    data: np.ndarray
    modality: str | None = None
    affine: np.ndarray = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        spacing = tuple(float(s) for s in self.spacing)
        if len(dims) != 3 or any(d < 1 for d in dims):
            raise ValueError(f"dims must be 3 positive integers, got {self.dims}")
        if len(spacing) != 3 or not all(s > 0 and np.isfinite(s) for s in spacing):
            raise ValueError(f"spacing must be 3 positive reals, got {self.spacing}")
        if self.modality is not None and self.modality not in MODALITIES:
            raise ValueError(f"unknown modality {self.modality!r}")
        data = np.asarray(self.data, dtype=np.float64).ravel()
        if data.size != dims[0] * dims[1] * dims[2]:
            raise ValueError(f"data length {data.size} != prod(dims) for dims {dims}")
        if not np.all(np.isfinite(data)):
            raise ValueError("volume contains non-finite intensities")
        affine = self.affine
        if affine is None:
            affine = np.diag(list(spacing) + [1.0])
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "data", _frozen(data))
        object.__setattr__(self, "affine", _frozen(np.asarray(affine, dtype=np.float64)))

    @classmethod
    def from_array(cls, array, spacing=(1.0, 1.0, 1.0), modality=None, affine=None):
        array = np.asarray(array)
        if array.ndim != 3:
            raise ValueError("expected a 3D array")
        return cls(array.shape, spacing, array.ravel(order="F"), modality, affine)

    @property
    def array(self) -> np.ndarray:
        """The data as an (x, y, z) array view."""
        return self.data.reshape(self.dims, order="F")

    def with_modality(self, modality: str) -> "Volume":
        return Volume(self.dims, self.spacing, self.data, modality, self.affine)


@dataclass(frozen=True)
class LabelMask:
    dims: tuple[int, int, int]
    spacing: tuple[float, float, float]
    labels: np.ndarray
    affine: np.ndarray = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        spacing = tuple(float(s) for s in self.spacing)
        if len(dims) != 3 or any(d < 1 for d in dims):
            raise ValueError(f"dims must be 3 positive integers, got {self.dims}")
        if len(spacing) != 3 or not all(s > 0 for s in spacing):
            raise ValueError(f"spacing must be 3 positive reals, got {self.spacing}")
        raw = np.asarray(self.labels).ravel()
        if raw.size != dims[0] * dims[1] * dims[2]:
            raise ValueError(f"labels length {raw.size} != prod(dims) for dims {dims}")
        if raw.dtype.kind == "f":
            if not np.all(np.isfinite(raw)) or np.any(raw != np.round(raw)):
                raise LabelError("label mask contains non-integer values")
        labels = raw.astype(np.int64)
        bad = np.setdiff1d(np.unique(labels), LABEL_CODES)
        if bad.size:
            raise LabelError(f"label codes {bad.tolist()} outside permitted set {LABEL_CODES}")
        affine = self.affine
        if affine is None:
            affine = np.diag(list(spacing) + [1.0])
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "labels", _frozen(labels.astype(np.int16)))
        object.__setattr__(self, "affine", _frozen(np.asarray(affine, dtype=np.float64)))

    @classmethod
    def from_array(cls, array, spacing=(1.0, 1.0, 1.0), affine=None):
        array = np.asarray(array)
        if array.ndim != 3:
            raise ValueError("expected a 3D array")
        return cls(array.shape, spacing, array.ravel(order="F"), affine)

    @classmethod
    def from_volume(cls, volume: Volume) -> "LabelMask":
        return cls(volume.dims, volume.spacing, volume.data, volume.affine)

    @property
    def array(self) -> np.ndarray:
        return self.labels.reshape(self.dims, order="F")


@dataclass(frozen=True)
class RegionMask:
    dims: tuple[int, int, int]
    spacing: tuple[float, float, float]
    member: np.ndarray
    region: str

    def __post_init__(self):
        if self.region not in REGIONS:
            raise ValueError(f"unknown region {self.region!r}")
        member = np.asarray(self.member, dtype=bool).ravel()
        if member.size != int(np.prod(self.dims)):
            raise ValueError("member length does not match dims")
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))
        object.__setattr__(self, "member", _frozen(member))

    @classmethod
    def from_array(cls, array, spacing=(1.0, 1.0, 1.0), region="whole"):
        array = np.asarray(array, dtype=bool)
        return cls(array.shape, spacing, array.ravel(order="F"), region)

    @property
    def array(self) -> np.ndarray:
        return self.member.reshape(self.dims, order="F")

    @property
    def empty(self) -> bool:
        return not self.member.any()

    @property
    def n_voxels(self) -> int:
        return int(self.member.sum())


class Regions(NamedTuple):
    whole: RegionMask
    core: RegionMask
    enh: RegionMask

    @property
    def empty(self) -> bool:
        """True when the whole-tumor region has no voxels."""
        return self.whole.empty


def derive_regions(mask: LabelMask) -> Regions:
    """Whole = {1, 2, 4}, core = {1, 4}, enhancing core = {4}."""
    lab = mask.labels
    whole = lab > 0
    core = (lab == 1) | (lab == 4)
    enh = lab == 4
    return Regions(
        RegionMask(mask.dims, mask.spacing, whole, "whole"),
        RegionMask(mask.dims, mask.spacing, core, "core"),
        RegionMask(mask.dims, mask.spacing, enh, "enh"),
    )


def check_same_grid(a, b, what: str = "volume") -> None:
    if tuple(a.dims) != tuple(b.dims):
        raise ShapeMismatchError(f"{what} dims {a.dims} != mask dims {b.dims}")
    if not np.allclose(a.spacing, b.spacing, rtol=0, atol=1e-6):
        raise ShapeMismatchError(f"{what} spacing {a.spacing} != mask spacing {b.spacing}")


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------


def _detect_endian(raw: bytes) -> str:
    for endian in "<>":
        ndim = struct.unpack_from(endian + "h", raw, _OFF_DIM)[0]
        if 1 <= ndim <= 7:
            return endian
    raise NiftiError("cannot determine byte order: dim[0] not in [1, 7]", _OFF_DIM)


def _quaternion_affine(endian: str, raw: bytes, pixdim) -> np.ndarray:
    b, c, d, qx, qy, qz = struct.unpack_from(endian + "6f", raw, _OFF_QUATERN)
    a = np.sqrt(max(0.0, 1.0 - (b * b + c * c + d * d)))
    rot = np.array(
        [
            [a * a + b * b - c * c - d * d, 2 * (b * c - a * d), 2 * (b * d + a * c)],
            [2 * (b * c + a * d), a * a + c * c - b * b - d * d, 2 * (c * d - a * b)],
            [2 * (b * d - a * c), 2 * (c * d + a * b), a * a + d * d - c * c - b * b],
        ]
    )
    qfac = -1.0 if pixdim[0] < 0 else 1.0
    aff = np.eye(4)
    aff[:3, :3] = rot * np.array([pixdim[1], pixdim[2], pixdim[3] * qfac])
    aff[:3, 3] = (qx, qy, qz)
    return aff


def parse_nifti(data: bytes, modality: str | None = None) -> Volume:
    """Parse a single-file NIFTI-1 byte image (optionally gzipped) into a Volume."""
    raw = bytes(data)
    if raw[:2] == b"\x1f\x8b":
        try:
            raw = gzip.decompress(raw)
        except (OSError, EOFError) as exc:
            raise NiftiError(f"corrupt gzip stream: {exc}", 0) from None
    if len(raw) < HEADER_SIZE:
        raise NiftiError(f"truncated header: {len(raw)} of {HEADER_SIZE} bytes", len(raw))

    endian = _detect_endian(raw)
    sizeof_hdr = struct.unpack_from(endian + "i", raw, 0)[0]
    if sizeof_hdr != HEADER_SIZE:
        raise NiftiError(f"sizeof_hdr is {sizeof_hdr}, expected 348", 0)
    magic = raw[_OFF_MAGIC:_OFF_MAGIC + 4]
    if magic != b"n+1\x00":
        raise NiftiError(f"bad magic {magic!r}; only single-file NIFTI-1 ('n+1') is supported", _OFF_MAGIC)

    dim = struct.unpack_from(endian + "8h", raw, _OFF_DIM)
    if dim[0] != 3:
        raise NiftiError(f"expected 3 dimensions, header declares {dim[0]}", _OFF_DIM)
    dims = dim[1:4]
    if any(d < 1 for d in dims):
        raise NiftiError(f"non-positive dimension in {dims}", _OFF_DIM + 2)

    code = struct.unpack_from(endian + "h", raw, _OFF_DATATYPE)[0]
    if code not in _DATATYPES:
        raise NiftiError(f"unsupported datatype code {code}", _OFF_DATATYPE)
    dtype = np.dtype(endian + _DATATYPES[code])

    pixdim = struct.unpack_from(endian + "8f", raw, _OFF_PIXDIM)
    spacing = tuple(float(abs(p)) for p in pixdim[1:4])
    if not all(s > 0 and np.isfinite(s) for s in spacing):
        raise NiftiError(f"non-positive voxel spacing {spacing}", _OFF_PIXDIM + 4)

    vox_offset = struct.unpack_from(endian + "f", raw, _OFF_VOX_OFFSET)[0]
    if not np.isfinite(vox_offset) or vox_offset < HEADER_SIZE:
        raise NiftiError(f"invalid vox_offset {vox_offset}", _OFF_VOX_OFFSET)
    start = int(vox_offset)
    count = dims[0] * dims[1] * dims[2]
    end = start + count * dtype.itemsize
    if len(raw) < end:
        raise NiftiError(f"truncated payload: need {end} bytes, have {len(raw)}", len(raw))
    values = np.frombuffer(raw, dtype=dtype, count=count, offset=start).astype(np.float64)

    slope, inter = struct.unpack_from(endian + "2f", raw, _OFF_SCL_SLOPE)
    if np.isfinite(slope) and slope != 0.0:
        values = values * float(slope) + (float(inter) if np.isfinite(inter) else 0.0)
    if not np.all(np.isfinite(values)):
        raise NiftiError("payload contains non-finite values", start)

    qform_code, sform_code = struct.unpack_from(endian + "2h", raw, _OFF_QFORM_CODE)
    if sform_code > 0:
        srow = struct.unpack_from(endian + "12f", raw, _OFF_SROW)
        affine = np.vstack([np.reshape(srow, (3, 4)), [0, 0, 0, 1]]).astype(np.float64)
    elif qform_code > 0:
        affine = _quaternion_affine(endian, raw, pixdim)
    else:
        affine = np.diag(list(spacing) + [1.0])

    return Volume(dims, spacing, values, modality, affine)


def parse_label_mask(data: bytes) -> LabelMask:
    return LabelMask.from_volume(parse_nifti(data))


def load_volume(path, modality: str | None = None) -> Volume:
    return parse_nifti(Path(path).read_bytes(), modality)


def load_label_mask(path) -> LabelMask:
    return parse_label_mask(Path(path).read_bytes())


# ---------------------------------------------------------------------------
# Writing
# ---------------------------------------------------------------------------


def to_nifti_bytes(image, dtype="f4", compress: bool = False) -> bytes:
    """Serialize a Volume or LabelMask into a minimal little-endian NIFTI-1 image.

    Gzip output uses mtime=0 so identical inputs give identical bytes.
    """
    dtype = np.dtype(dtype).newbyteorder("<")
    code = _DTYPE_CODES.get(dtype.str[1:])
    if code is None:
        raise ValueError(f"cannot write dtype {dtype}")
    values = image.labels if isinstance(image, LabelMask) else image.data
    if dtype.kind in "iu":
        info = np.iinfo(dtype)
        if values.min(initial=0) < info.min or values.max(initial=0) > info.max:
            raise ValueError(f"values do not fit in {dtype}")
    payload = np.asarray(values).astype(dtype).tobytes()

    hdr = bytearray(DEFAULT_VOX_OFFSET)
    struct.pack_into("<i", hdr, 0, HEADER_SIZE)
    struct.pack_into("<8h", hdr, _OFF_DIM, 3, *image.dims, 1, 1, 1, 1)
    struct.pack_into("<2h", hdr, _OFF_DATATYPE, code, dtype.itemsize * 8)
    struct.pack_into("<8f", hdr, _OFF_PIXDIM, 1.0, *image.spacing, 1.0, 1.0, 1.0, 1.0)
    struct.pack_into("<f", hdr, _OFF_VOX_OFFSET, float(DEFAULT_VOX_OFFSET))
    struct.pack_into("<2f", hdr, _OFF_SCL_SLOPE, 1.0, 0.0)
    struct.pack_into("<2h", hdr, _OFF_QFORM_CODE, 0, 1)
    struct.pack_into("<12f", hdr, _OFF_SROW, *np.asarray(image.affine)[:3].ravel())
    hdr[_OFF_MAGIC:_OFF_MAGIC + 4] = b"n+1\x00"
    out = bytes(hdr) + payload
    if compress:
        out = gzip.compress(out, compresslevel=6, mtime=0)
    return out


def save_nifti(path, image, dtype="f4") -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(to_nifti_bytes(image, dtype, compress=path.name.endswith(".gz")))
    return path
