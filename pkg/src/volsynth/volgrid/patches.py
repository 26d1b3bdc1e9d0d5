"""Regular patch tiling with clamped last positions, and mean-blended stitching."""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from ..errors import ShapeError, SizeError
from .volume import Volume

Int3 = Tuple[int, int, int]


@dataclass(frozen=True)
class PatchLayout:
    patch_shape: Int3
    stride: Int3
    positions: Tuple[Int3, ...]
    source_shape: Int3

    def __len__(self) -> int:
        return len(self.positions)


def _int3(values, name: str) -> Int3:
    t = tuple(int(v) for v in values)
    if len(t) != 3 or min(t) < 1:
        raise ShapeError(f"{name} must be 3 positive integers, got {values}")
    return t


def axis_positions(n: int, p: int, s: int) -> List[int]:
    """Corner indices along one axis; the last window is clamped to end at ``n``."""
    if p > n:
        raise SizeError(f"patch extent {p} exceeds volume extent {n}")
    pos = list(range(0, n - p + 1, s))
    if pos[-1] + p < n:
        pos.append(n - p)
    return pos


def plan_patches(shape: Sequence[int], patch_shape: Sequence[int], stride: Sequence[int]) -> PatchLayout:
    shape = _int3(shape, "shape")
    patch_shape = _int3(patch_shape, "patch_shape")
    stride = _int3(stride, "stride")
    per_axis = [axis_positions(n, p, s) for n, p, s in zip(shape, patch_shape, stride)]
    positions = tuple(itertools.product(*per_axis))
    return PatchLayout(patch_shape, stride, positions, shape)


def extract_patches(v, patch_shape, stride=None) -> Tuple[PatchLayout, List[np.ndarray]]:
    """Cut ``v`` (a :class:`Volume` or 3D array) into a covering set of patches.

    ``stride`` defaults to ``patch_shape`` (non-overlapping tiling).
    """
    data = v.data if isinstance(v, Volume) else np.asarray(v)
    if stride is None:
        stride = patch_shape
    layout = plan_patches(data.shape, patch_shape, stride)
    px, py, pz = layout.patch_shape
    patches = [data[x : x + px, y : y + py, z : z + pz].copy() for x, y, z in layout.positions]
    return layout, patches


def stitch_array(layout: PatchLayout, patches: Sequence[np.ndarray], out_shape=None) -> np.ndarray:
    out_shape = layout.source_shape if out_shape is None else _int3(out_shape, "out_shape")
    if len(patches) != len(layout.positions):
        raise ShapeError(f"layout has {len(layout.positions)} positions but {len(patches)} patches given")
    # running mean: identical overlapping contributions add exactly zero, so
    # stitch(extract(v)) reproduces v bit for bit at any stride and dtype
    mean = np.zeros(out_shape, dtype=np.float64)
    count = np.zeros(out_shape, dtype=np.int32)
    px, py, pz = layout.patch_shape
    for (x, y, z), patch in zip(layout.positions, patches):
        patch = np.asarray(patch)
        if patch.shape != layout.patch_shape:
            raise ShapeError(f"patch shape {patch.shape} does not match layout {layout.patch_shape}")
        if x + px > out_shape[0] or y + py > out_shape[1] or z + pz > out_shape[2]:
            raise ShapeError(f"patch at {(x, y, z)} falls outside output shape {out_shape}")
        sl = (slice(x, x + px), slice(y, y + py), slice(z, z + pz))
        count[sl] += 1
        mean[sl] += (patch - mean[sl]) / count[sl]
    if np.any(count == 0):
        raise ShapeError("layout does not cover every output voxel")
    return mean


def stitch_patches(layout: PatchLayout, patches, out_shape=None, spacing_mm=(1.0, 1.0, 1.0), origin_mm=(0.0, 0.0, 0.0)) -> Volume:
    """Recombine patches; overlapping voxels get the arithmetic mean of contributions.

    Patches cut from one volume reassemble it exactly for any stride.
    """
    return Volume(stitch_array(layout, patches, out_shape), spacing_mm, origin_mm)
