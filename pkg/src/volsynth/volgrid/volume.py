"""Volume containers, intensity normalization and trilinear resampling."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence, Tuple

import numpy as np

from ..errors import InvariantError, ShapeError

#: Storage type for volume intensities. Matches the training precision of the
#: autodiff engine so volumes round-trip through NIfTI float32 bit-exactly.
REAL = np.float32

Triple = Tuple[float, float, float]


def _triple(values, name: str) -> Tuple[float, ...]:
    t = tuple(float(v) for v in values)
    if len(t) != 3:
        raise ShapeError(f"{name} must have 3 components, got {len(t)}")
    return t


@dataclass(frozen=True, eq=False)
class Volume:
    """A 3D scalar grid indexed ``[x, y, z]`` with voxel spacing and origin in mm."""

    data: np.ndarray
    spacing_mm: Triple = (1.0, 1.0, 1.0)
    origin_mm: Triple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3 or min(data.shape) < 1:
            raise ShapeError(f"volume data must be a non-empty 3D array, got shape {data.shape}")
        data = np.ascontiguousarray(data, dtype=REAL)
        if not np.all(np.isfinite(data)):
            raise InvariantError("volume intensities must be finite (found NaN or Inf)")
        spacing = _triple(self.spacing_mm, "spacing_mm")
        if not all(np.isfinite(s) and s > 0 for s in spacing):
            raise InvariantError(f"spacing_mm must be positive and finite, got {spacing}")
        origin = _triple(self.origin_mm, "origin_mm")
        if not all(np.isfinite(o) for o in origin):
            raise InvariantError(f"origin_mm must be finite, got {origin}")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing_mm", spacing)
        object.__setattr__(self, "origin_mm", origin)

    @property
    def shape(self) -> Tuple[int, int, int]:
        return tuple(int(n) for n in self.data.shape)

    def with_data(self, data: np.ndarray) -> "Volume":
        """Same grid geometry, new intensities."""
        return Volume(data, self.spacing_mm, self.origin_mm)

    def identical(self, other: "Volume") -> bool:
        """Bit-exact equality of intensities and geometry."""
        return (
            self.shape == other.shape
            and self.spacing_mm == other.spacing_mm
            and self.origin_mm == other.origin_mm
            and np.array_equal(self.data.view(np.uint32), other.data.view(np.uint32))
        )


@dataclass(frozen=True, eq=False)
class LabelVolume:
    """Integer segmentation labels on a volume grid."""

    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 3:
            raise ShapeError(f"labels must be 3D, got shape {labels.shape}")
        if self.num_classes < 1:
            raise InvariantError("num_classes must be positive")
        if labels.size and (labels.min() < 0 or labels.max() >= self.num_classes):
            raise InvariantError(f"label values must lie in [0, {self.num_classes})")
        object.__setattr__(self, "labels", labels.astype(np.int32, copy=False))

    @property
    def shape(self) -> Tuple[int, int, int]:
        return tuple(int(n) for n in self.labels.shape)


@dataclass(frozen=True, eq=False)
class PairedSample:
    """A co-registered (low-field, high-field) pair sharing one grid."""

    low_field: Volume
    high_field: Volume
    subject_id: str = field(default="")

    def __post_init__(self):
        if self.low_field.shape != self.high_field.shape:
            raise ShapeError(
                f"pair members must share a grid: {self.low_field.shape} vs {self.high_field.shape}"
            )


def normalize_intensity(v: Volume, clip_lo_pct: float = 0.5, clip_hi_pct: float = 99.5) -> Volume:
    """Clip to a percentile band and map it affinely onto [0, 1].

    The lower bound uses the ``lower`` percentile rule and the upper bound the
    ``higher`` rule, so both bounds are actual voxel values. That makes the
    operation idempotent: on a second pass the bounds come out as exactly 0 and 1.
    Constant volumes map to zeros.
    """
    if not 0.0 <= clip_lo_pct < clip_hi_pct <= 100.0:
        raise ValueError(f"need 0 <= lo < hi <= 100, got ({clip_lo_pct}, {clip_hi_pct})")
    x = v.data.astype(np.float64)
    lo = float(np.percentile(x, clip_lo_pct, method="lower"))
    hi = float(np.percentile(x, clip_hi_pct, method="higher"))
    if hi <= lo:
        return v.with_data(np.zeros_like(x))
    out = (np.clip(x, lo, hi) - lo) / (hi - lo)
    return v.with_data(out)


def _source_coords(n_in: int, n_out: int) -> np.ndarray:
    # voxel-centred mapping between grids spanning the same physical extent
    if n_in == n_out:
        return np.arange(n_out, dtype=np.float64)
    c = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
    return np.clip(c, 0.0, n_in - 1)


def _interp_axis(a: np.ndarray, axis: int, n_out: int) -> np.ndarray:
    n_in = a.shape[axis]
    if n_in == n_out:
        return a
    c = _source_coords(n_in, n_out)
    i0 = np.floor(c).astype(np.intp)
    i1 = np.minimum(i0 + 1, n_in - 1)
    w = c - i0
    shape = [1] * a.ndim
    shape[axis] = n_out
    w = w.reshape(shape)
    return np.take(a, i0, axis=axis) * (1.0 - w) + np.take(a, i1, axis=axis) * w


def resample_array(a: np.ndarray, target_shape: Sequence[int]) -> np.ndarray:
    """Separable trilinear resampling of a 3D array with clamp-to-edge sampling."""
    out = np.asarray(a, dtype=np.float64)
    for axis, n in enumerate(target_shape):
        out = _interp_axis(out, axis, int(n))
    return out


def resample_trilinear(v: Volume, target_shape: Sequence[int]) -> Volume:
    """Resample onto ``target_shape`` over the same physical extent."""
    target = tuple(int(n) for n in target_shape)
    if len(target) != 3 or min(target) < 1:
        raise ShapeError(f"target_shape must be 3 positive integers, got {target_shape}")
    if target == v.shape:
        return v
    data = resample_array(v.data, target)
    spacing = tuple(s * n_in / n_out for s, n_in, n_out in zip(v.spacing_mm, v.shape, target))
    return Volume(data, spacing, v.origin_mm)
