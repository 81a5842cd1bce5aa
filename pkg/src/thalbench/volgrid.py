"""Labeled 3D volumes: geometry, voxel sets, and a small NIfTI-1 reader/writer.

Arrays are indexed ``[x, y, z]``. The linear order used everywhere (file
payload, voxel-set ordering, reductions) is x-fastest, matching NIfTI.

Only single-file NIfTI-1 (``n+1``) is supported, uncompressed, with datatypes
uint8, int16, int32, float32 and uint16. ``scl_slope``/``scl_inter`` are
ignored because label data must not be rescaled. The qform/sform block is
carried through untouched but never interpreted; inputs are assumed to be
already aligned on a common voxel grid.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from os import PathLike
from typing import Iterable, Union

import numpy as np

__all__ = [
    "NiftiFormatError",
    "VolumeGeometry",
    "Orientation",
    "LabelVolume",
    "VoxelSet",
    "read_volume",
    "write_volume",
    "voxel_set",
    "label_volume_mm3",
    "DATATYPES",
]

PathType = Union[str, PathLike]

HEADER_SIZE = 348
DEFAULT_VOX_OFFSET = 352
MAX_WRITE_LABEL = 65535
FLOAT_LABEL_TOLERANCE = 1e-3

# datatype code -> (numpy dtype char, bitpix, largest label it can hold)
DATATYPES = {
    2: ("u1", 8, 255),
    4: ("i2", 16, 32767),
    8: ("i4", 32, 2**31 - 1),
    16: ("f4", 32, 2**24),
    512: ("u2", 16, 65535),
}

_HEADER_FMT = "i10s18sihbb8h3f4h8f3fhbb4f2i80s24s2h6f12f16s4s"
_HEADER_FIELDS = (
    ["sizeof_hdr", "data_type", "db_name", "extents", "session_error",
     "regular", "dim_info"]
    + [f"dim{i}" for i in range(8)]
    + ["intent_p1", "intent_p2", "intent_p3", "intent_code", "datatype",
       "bitpix", "slice_start"]
    + [f"pixdim{i}" for i in range(8)]
    + ["vox_offset", "scl_slope", "scl_inter", "slice_end", "slice_code",
       "xyzt_units", "cal_max", "cal_min", "slice_duration", "toffset",
       "glmax", "glmin", "descrip", "aux_file", "qform_code", "sform_code",
       "quatern_b", "quatern_c", "quatern_d", "qoffset_x", "qoffset_y",
       "qoffset_z"]
    + [f"srow_{axis}{i}" for axis in "xyz" for i in range(4)]
    + ["intent_name", "magic"]
)
assert struct.calcsize("<" + _HEADER_FMT) == HEADER_SIZE


class NiftiFormatError(ValueError):
    """Raised for files outside the supported NIfTI-1 subset."""


@dataclass(frozen=True)
class VolumeGeometry:
    """Grid size in voxels and voxel spacing in mm."""

    dims: tuple[int, int, int]
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        spacing = tuple(float(s) for s in self.spacing)
        if len(dims) != 3 or len(spacing) != 3:
            raise ValueError("geometry needs exactly 3 dims and 3 spacings")
        if any(d < 1 for d in dims):
            raise ValueError(f"dims must be >= 1, got {dims}")
        if not all(np.isfinite(s) and s > 0 for s in spacing):
            raise ValueError(f"spacing must be positive, got {spacing}")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "spacing", spacing)

    @property
    def n_voxels(self) -> int:
        return self.dims[0] * self.dims[1] * self.dims[2]

    @property
    def voxel_volume(self) -> float:
        return self.spacing[0] * self.spacing[1] * self.spacing[2]

    def contains(self, coords: np.ndarray) -> np.ndarray:
        coords = np.asarray(coords)
        return np.all((coords >= 0) & (coords < np.asarray(self.dims)), axis=-1)


@dataclass(frozen=True)
class Orientation:
    """Raw qform/sform fields, preserved across read/write without use."""

    qfac: float = 1.0
    qform_code: int = 0
    sform_code: int = 0
    quatern: tuple[float, float, float] = (0.0, 0.0, 0.0)
    qoffset: tuple[float, float, float] = (0.0, 0.0, 0.0)
    srow: tuple[float, ...] = field(default=(0.0,) * 12)


class LabelVolume:
    """Immutable 3D grid of non-negative integer labels (0 = background)."""

    __slots__ = ("geometry", "array", "orientation")

    def __init__(self, array, spacing=(1.0, 1.0, 1.0), orientation=None):
        arr = np.asarray(array)
        if arr.ndim != 3:
            raise ValueError(f"label array must be 3D, got shape {arr.shape}")
        if arr.dtype.kind == "f":
            if not np.all(np.isfinite(arr)) or np.any(arr != np.round(arr)):
                raise ValueError("label array contains non-integer values")
        elif arr.dtype.kind not in "iub":
            raise ValueError(f"unsupported label dtype {arr.dtype}")
        if arr.size and arr.min() < 0:
            raise ValueError("labels must be non-negative")
        if arr.size and arr.max() > np.iinfo(np.int32).max:
            raise ValueError("label exceeds int32 range")
        data = np.array(arr, dtype=np.int32, copy=True)
        data.flags.writeable = False
        self.geometry = VolumeGeometry(data.shape, spacing)
        self.array = data
        self.orientation = orientation or Orientation()

    @classmethod
    def zeros(cls, dims, spacing=(1.0, 1.0, 1.0)) -> "LabelVolume":
        return cls(np.zeros(tuple(dims), dtype=np.int32), spacing)

    @property
    def labels(self) -> np.ndarray:
        """Labels flattened in x-fastest linear order."""
        return self.array.ravel(order="F")

    def present_labels(self) -> list[int]:
        values = np.unique(self.array)
        return [int(v) for v in values if v != 0]

    def with_array(self, array) -> "LabelVolume":
        return LabelVolume(array, self.geometry.spacing, self.orientation)

    def __eq__(self, other):
        if not isinstance(other, LabelVolume):
            return NotImplemented
        return (self.geometry == other.geometry
                and np.array_equal(self.array, other.array))

    __hash__ = None

    def __repr__(self):
        return (f"LabelVolume(dims={self.geometry.dims}, "
                f"spacing={self.geometry.spacing}, labels={self.present_labels()})")


def _linear_index(coords: np.ndarray, dims) -> np.ndarray:
    nx, ny, _ = dims
    return coords[:, 0] + nx * (coords[:, 1] + ny * coords[:, 2])


class VoxelSet:
    """A set of voxel coordinates on a grid, kept in x-fastest linear order."""

    __slots__ = ("coords", "geometry")

    def __init__(self, coords, geometry: VolumeGeometry, *, _trusted=False):
        coords = np.asarray(coords, dtype=np.int64).reshape(-1, 3)
        if not _trusted:
            if len(coords) and not np.all(geometry.contains(coords)):
                raise ValueError("voxel coordinates outside geometry bounds")
            lin = _linear_index(coords, geometry.dims)
            order = np.argsort(lin, kind="stable")
            lin = lin[order]
            if np.any(lin[1:] == lin[:-1]):
                raise ValueError("duplicate voxel coordinates")
            coords = coords[order]
        coords.flags.writeable = False
        self.coords = coords
        self.geometry = geometry

    @classmethod
    def from_mask(cls, mask, geometry: VolumeGeometry) -> "VoxelSet":
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != geometry.dims:
            raise ValueError(f"mask shape {mask.shape} != dims {geometry.dims}")
        # nonzero on the transposed mask enumerates z-slowest, x-fastest
        z, y, x = np.nonzero(mask.T)
        return cls(np.stack([x, y, z], axis=1), geometry, _trusted=True)

    def mask(self) -> np.ndarray:
        out = np.zeros(self.geometry.dims, dtype=bool)
        if len(self.coords):
            out[tuple(self.coords.T)] = True
        return out

    def linear_indices(self) -> np.ndarray:
        return _linear_index(self.coords, self.geometry.dims)

    def translated(self, offset: Iterable[int]) -> "VoxelSet":
        return VoxelSet(self.coords + np.asarray(list(offset), dtype=np.int64),
                        self.geometry)

    def __len__(self):
        return len(self.coords)

    def __bool__(self):
        return len(self.coords) > 0

    def __eq__(self, other):
        if not isinstance(other, VoxelSet):
            return NotImplemented
        return (self.geometry == other.geometry
                and np.array_equal(self.coords, other.coords))

    __hash__ = None

    def __repr__(self):
        return f"VoxelSet(n={len(self)}, dims={self.geometry.dims})"


def voxel_set(v: LabelVolume, label: int) -> VoxelSet:
    """Coordinates where ``v`` equals ``label``."""
    if label <= 0:
        raise ValueError("label must be positive (0 is background)")
    return VoxelSet.from_mask(v.array == label, v.geometry)


def label_volume_mm3(v: LabelVolume, label: int) -> float:
    if label <= 0:
        raise ValueError("label must be positive (0 is background)")
    count = int(np.count_nonzero(v.array == label))
    return count * v.geometry.voxel_volume


# --------------------------------------------------------------------------
# NIfTI-1 I/O
# --------------------------------------------------------------------------

def _detect_byteorder(raw: bytes) -> str:
    if struct.unpack("<i", raw[:4])[0] == HEADER_SIZE:
        return "<"
    if struct.unpack(">i", raw[:4])[0] == HEADER_SIZE:
        return ">"
    raise NiftiFormatError("malformed header: sizeof_hdr is not 348")


def _parse_header(raw: bytes) -> tuple[dict, str]:
    if len(raw) < HEADER_SIZE:
        raise NiftiFormatError(
            f"malformed header: file has {len(raw)} bytes, need {HEADER_SIZE}")
    bo = _detect_byteorder(raw)
    values = struct.unpack(bo + _HEADER_FMT, raw[:HEADER_SIZE])
    return dict(zip(_HEADER_FIELDS, values)), bo


def read_volume(path: PathType) -> LabelVolume:
    """Read a label volume from a single-file NIfTI-1 image."""
    with open(path, "rb") as fh:
        raw = fh.read()
    hdr, bo = _parse_header(raw)

    magic = hdr["magic"]
    if magic == b"ni1\x00":
        raise NiftiFormatError("unsupported: header/image pair (ni1) files")
    if magic != b"n+1\x00":
        raise NiftiFormatError(f"malformed header: bad magic {magic!r}")

    ndim = hdr["dim0"]
    if not 3 <= ndim <= 7:
        raise NiftiFormatError(f"unsupported dimensionality dim[0]={ndim}")
    dims = [hdr[f"dim{i}"] for i in range(1, ndim + 1)]
    if any(d < 1 for d in dims):
        raise NiftiFormatError(f"malformed header: non-positive dims {dims}")
    if any(d != 1 for d in dims[3:]):
        raise NiftiFormatError(
            f"unsupported: non-singleton dimensions beyond 3D {dims}")
    dims = dims[:3]

    code = hdr["datatype"]
    if code not in DATATYPES:
        raise NiftiFormatError(f"unsupported datatype code {code}")
    char, _, _ = DATATYPES[code]
    dtype = np.dtype(bo + char)

    offset = int(hdr["vox_offset"])
    if offset < HEADER_SIZE:
        raise NiftiFormatError(f"malformed header: vox_offset {offset} < 348")
    n = dims[0] * dims[1] * dims[2]
    nbytes = n * dtype.itemsize
    if len(raw) < offset + nbytes:
        raise NiftiFormatError(
            f"malformed file: expected {nbytes} data bytes at offset {offset}")
    flat = np.frombuffer(raw, dtype=dtype, count=n, offset=offset)

    if dtype.kind == "f":
        if not np.all(np.isfinite(flat)):
            raise NiftiFormatError("non-finite label value")
        rounded = np.round(flat)
        if np.any(np.abs(flat - rounded) > FLOAT_LABEL_TOLERANCE):
            worst = flat[np.argmax(np.abs(flat - rounded))]
            raise NiftiFormatError(f"non-integer label value {worst}")
        flat = rounded
    if n and flat.min() < 0:
        raise NiftiFormatError("negative label value")

    spacing = tuple(float(hdr[f"pixdim{i}"]) for i in (1, 2, 3))
    if not all(s > 0 for s in spacing):
        raise NiftiFormatError(f"non-positive voxel spacing {spacing}")
    orientation = Orientation(
        qfac=float(hdr["pixdim0"]),
        qform_code=int(hdr["qform_code"]),
        sform_code=int(hdr["sform_code"]),
        quatern=(hdr["quatern_b"], hdr["quatern_c"], hdr["quatern_d"]),
        qoffset=(hdr["qoffset_x"], hdr["qoffset_y"], hdr["qoffset_z"]),
        srow=tuple(hdr[f"srow_{a}{i}"] for a in "xyz" for i in range(4)),
    )
    array = flat.astype(np.int32).reshape(dims, order="F")
    return LabelVolume(array, spacing, orientation)


def _pick_datatype(max_label: int) -> int:
    return 2 if max_label <= 255 else 512


def write_volume(v: LabelVolume, path: PathType, datatype: int | None = None,
                 byteorder: str = "<") -> None:
    """Write ``v`` as NIfTI-1.

    The smallest unsigned type that holds the labels is used unless
    ``datatype`` is given. ``byteorder`` is ``"<"`` or ``">"``.
    """
    max_label = int(v.array.max()) if v.array.size else 0
    if max_label > MAX_WRITE_LABEL:
        raise ValueError(f"label {max_label} exceeds writable maximum {MAX_WRITE_LABEL}")
    if byteorder not in ("<", ">"):
        raise ValueError("byteorder must be '<' or '>'")
    if datatype is None:
        datatype = _pick_datatype(max_label)
    if datatype not in DATATYPES:
        raise ValueError(f"unsupported datatype code {datatype}")
    char, bitpix, limit = DATATYPES[datatype]
    if max_label > limit:
        raise ValueError(f"label {max_label} does not fit datatype {datatype}")

    g, o = v.geometry, v.orientation
    hdr = dict.fromkeys(_HEADER_FIELDS, 0)
    hdr.update(
        sizeof_hdr=HEADER_SIZE, data_type=b"", db_name=b"", regular=ord("r"),
        dim0=3, dim1=g.dims[0], dim2=g.dims[1], dim3=g.dims[2],
        dim4=1, dim5=1, dim6=1, dim7=1,
        datatype=datatype, bitpix=bitpix,
        pixdim0=o.qfac, pixdim1=g.spacing[0], pixdim2=g.spacing[1],
        pixdim3=g.spacing[2],
        vox_offset=float(DEFAULT_VOX_OFFSET), scl_slope=0.0, scl_inter=0.0,
        xyzt_units=2, descrip=b"thalbench label volume", aux_file=b"",
        qform_code=o.qform_code, sform_code=o.sform_code,
        quatern_b=o.quatern[0], quatern_c=o.quatern[1], quatern_d=o.quatern[2],
        qoffset_x=o.qoffset[0], qoffset_y=o.qoffset[1], qoffset_z=o.qoffset[2],
        intent_name=b"", magic=b"n+1\x00",
    )
    for k, (a, i) in enumerate((a, i) for a in "xyz" for i in range(4)):
        hdr[f"srow_{a}{i}"] = o.srow[k]
    header = struct.pack(byteorder + _HEADER_FMT,
                         *(hdr[name] for name in _HEADER_FIELDS))
    payload = v.array.astype(np.dtype(byteorder + char)).tobytes(order="F")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(b"\x00" * (DEFAULT_VOX_OFFSET - HEADER_SIZE))
        fh.write(payload)
