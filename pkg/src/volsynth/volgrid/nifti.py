"""Reader and writer for a single-file NIfTI-1 subset.

Supported: little-endian ``.nii`` (optionally gzip-compressed), 3D data of
datatype float32 (16) or int16 (4), axis-aligned sform, ``scl_slope`` /
``scl_inter`` applied on read. Everything else in the header is written as
zero and ignored on read.
"""

from __future__ import annotations

import gzip
import struct
from pathlib import Path

import numpy as np

from ..errors import CorruptFileError, FormatError, InvariantError, UnsupportedFeatureError
from .volume import REAL, Volume

HEADER_SIZE = 348
VOX_OFFSET = 352
MAGIC = b"n+1\x00"

DT_INT16 = 4
DT_FLOAT32 = 16
_DTYPES = {DT_INT16: (np.dtype("<i2"), 16), DT_FLOAT32: (np.dtype("<f4"), 32)}

# byte offsets of the honored header fields
_OFF_DIM = 40
_OFF_DATATYPE = 70
_OFF_BITPIX = 72
_OFF_PIXDIM = 76
_OFF_VOX_OFFSET = 108
_OFF_SCL_SLOPE = 112
_OFF_SCL_INTER = 116
_OFF_XYZT_UNITS = 123
_OFF_QFORM_CODE = 252
_OFF_SFORM_CODE = 254
_OFF_SROW = 280
_OFF_MAGIC = 344

NIFTI_UNITS_MM = 2


def _f32(x: float) -> float:
    # shortest decimal that round-trips through float32, so 0.7 reads back as 0.7
    return float(np.format_float_positional(np.float32(x), unique=True, trim="0"))


def encode_volume(v: Volume) -> bytes:
    """Serialize ``v`` to NIfTI-1 bytes (header, 4 extension bytes, float32 payload)."""
    if not np.all(np.isfinite(v.data)):
        raise InvariantError("cannot write a volume containing NaN or Inf")
    hdr = bytearray(VOX_OFFSET)
    struct.pack_into("<i", hdr, 0, HEADER_SIZE)
    struct.pack_into("<8h", hdr, _OFF_DIM, 3, *v.shape, 1, 1, 1, 1)
    struct.pack_into("<hh", hdr, _OFF_DATATYPE, DT_FLOAT32, 32)
    struct.pack_into("<8f", hdr, _OFF_PIXDIM, 1.0, *v.spacing_mm, 0.0, 0.0, 0.0, 0.0)
    struct.pack_into("<f", hdr, _OFF_VOX_OFFSET, float(VOX_OFFSET))
    struct.pack_into("<ff", hdr, _OFF_SCL_SLOPE, 1.0, 0.0)
    hdr[_OFF_XYZT_UNITS] = NIFTI_UNITS_MM
    struct.pack_into("<hh", hdr, _OFF_QFORM_CODE, 0, 1)
    sx, sy, sz = v.spacing_mm
    ox, oy, oz = v.origin_mm
    struct.pack_into("<4f", hdr, _OFF_SROW, sx, 0.0, 0.0, ox)
    struct.pack_into("<4f", hdr, _OFF_SROW + 16, 0.0, sy, 0.0, oy)
    struct.pack_into("<4f", hdr, _OFF_SROW + 32, 0.0, 0.0, sz, oz)
    hdr[_OFF_MAGIC : _OFF_MAGIC + 4] = MAGIC
    payload = np.asarray(v.data, dtype="<f4").tobytes(order="F")
    return bytes(hdr) + payload


def decode_volume(buf: bytes) -> Volume:
    """Parse NIfTI-1 bytes produced by :func:`encode_volume` or compatible writers."""
    if len(buf) < HEADER_SIZE:
        raise CorruptFileError(f"file too short for a NIfTI header ({len(buf)} bytes)")
    (sizeof_hdr,) = struct.unpack_from("<i", buf, 0)
    if sizeof_hdr != HEADER_SIZE:
        if struct.unpack_from(">i", buf, 0)[0] == HEADER_SIZE:
            raise UnsupportedFeatureError("big-endian NIfTI files are not supported")
        raise FormatError(f"bad sizeof_hdr {sizeof_hdr}, expected {HEADER_SIZE}")
    magic = bytes(buf[_OFF_MAGIC : _OFF_MAGIC + 4])
    if magic != MAGIC:
        if magic == b"ni1\x00":
            raise UnsupportedFeatureError("two-file (.hdr/.img) NIfTI is not supported")
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}")

    dim = struct.unpack_from("<8h", buf, _OFF_DIM)
    ndim = dim[0]
    if ndim < 3 or ndim > 7 or any(d != 1 for d in dim[4 : ndim + 1]):
        raise UnsupportedFeatureError(f"only 3D volumes are supported, got dim={dim}")
    shape = tuple(int(d) for d in dim[1:4])
    if min(shape) < 1:
        raise CorruptFileError(f"non-positive dimension in {shape}")

    datatype, bitpix = struct.unpack_from("<hh", buf, _OFF_DATATYPE)
    if datatype not in _DTYPES:
        raise UnsupportedFeatureError(f"unsupported NIfTI datatype code {datatype}")
    dtype, expected_bits = _DTYPES[datatype]
    if bitpix != expected_bits:
        raise CorruptFileError(f"bitpix {bitpix} inconsistent with datatype {datatype}")

    pixdim = struct.unpack_from("<8f", buf, _OFF_PIXDIM)
    (vox_offset,) = struct.unpack_from("<f", buf, _OFF_VOX_OFFSET)
    slope, inter = struct.unpack_from("<ff", buf, _OFF_SCL_SLOPE)
    sform_code = struct.unpack_from("<h", buf, _OFF_SFORM_CODE)[0]

    offset = int(vox_offset)
    if offset < HEADER_SIZE:
        raise CorruptFileError(f"vox_offset {vox_offset} lies inside the header")
    count = shape[0] * shape[1] * shape[2]
    nbytes = count * dtype.itemsize
    if len(buf) < offset + nbytes:
        raise CorruptFileError(
            f"payload truncated: need {nbytes} bytes at offset {offset}, file has {len(buf)}"
        )
    raw = np.frombuffer(buf, dtype=dtype, count=count, offset=offset)
    data = raw.reshape(shape, order="F")
    if slope != 0.0 and not (slope == 1.0 and inter == 0.0):
        data = data.astype(np.float64) * slope + inter
    data = np.ascontiguousarray(data, dtype=REAL)

    spacing = tuple(abs(_f32(p)) if p != 0 else 1.0 for p in pixdim[1:4])
    origin = (0.0, 0.0, 0.0)
    if sform_code > 0:
        srow = struct.unpack_from("<12f", buf, _OFF_SROW)
        origin = (_f32(srow[3]), _f32(srow[7]), _f32(srow[11]))
    return Volume(data, spacing, origin)


def write_volume(v: Volume, path) -> None:
    """Write ``v`` as a single-file NIfTI-1 (``.nii`` or ``.nii.gz``)."""
    path = Path(path)
    buf = encode_volume(v)
    if path.suffix == ".gz":
        # mtime=0 and no stored name keep compressed output byte-identical across reruns
        buf = gzip.compress(buf, mtime=0)
    path.write_bytes(buf)


def read_volume(path) -> Volume:
    """Read a NIfTI-1 subset file into a :class:`Volume`."""
    path = Path(path)
    buf = path.read_bytes()
    if path.suffix == ".gz":
        try:
            buf = gzip.decompress(buf)
        except (OSError, EOFError) as exc:
            raise CorruptFileError(f"{path}: {exc}") from None
    return decode_volume(buf)
