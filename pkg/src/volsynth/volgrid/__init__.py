"""Volumes, NIfTI I/O, resampling, patch tiling and synthetic phantoms."""

from .nifti import decode_volume, encode_volume, read_volume, write_volume
from .patches import PatchLayout, extract_patches, plan_patches, stitch_array, stitch_patches
from .phantom import make_phantom_pair
from .volume import (
    REAL,
    LabelVolume,
    PairedSample,
    Volume,
    normalize_intensity,
    resample_array,
    resample_trilinear,
)

__all__ = [
    "REAL",
    "LabelVolume",
    "PairedSample",
    "PatchLayout",
    "Volume",
    "decode_volume",
    "encode_volume",
    "extract_patches",
    "make_phantom_pair",
    "normalize_intensity",
    "plan_patches",
    "read_volume",
    "resample_array",
    "resample_trilinear",
    "stitch_array",
    "stitch_patches",
    "write_volume",
]
