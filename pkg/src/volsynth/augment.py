"""Paired geometric augmentation plus low-field-only gamma and resolution degradation.

Every original pair yields ``augmented_per_original`` extra pairs. Each extra
pair applies flip -> rotate -> elastic to both members with shared parameters,
then gamma -> degrade to the low-field member only.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.ndimage import map_coordinates
from scipy.spatial.transform import Rotation

from .errors import ConfigurationError, DomainError
from .volgrid import PairedSample, Volume, resample_array

#: flip plane name -> array axis that gets reversed
FLIP_AXES = {"sagittal": 0, "coronal": 1}


@dataclass
class AugmentSpec:
    enable_flip: bool = True
    flip_probability: float = 0.5
    rotation_max_deg: float = 20.0
    elastic: Optional[Tuple[int, float]] = (8, 4.0)  # (control spacing, max displacement) in voxels
    gamma_log_range: float = 0.3
    downsample_range: Tuple[float, float] = (1.0, 5.0)
    augmented_per_original: int = 2
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.rotation_max_deg <= 90.0:
            raise ConfigurationError("rotation_max_deg must lie in [0, 90]")
        if self.gamma_log_range < 0:
            raise ConfigurationError("gamma_log_range must be non-negative")
        lo, hi = (float(x) for x in self.downsample_range)
        if not 1.0 <= lo <= hi <= 8.0:
            raise ConfigurationError(f"downsample_range {self.downsample_range} must satisfy 1 <= lo <= hi <= 8")
        self.downsample_range = (lo, hi)
        if not 0.0 <= self.flip_probability <= 1.0:
            raise ConfigurationError("flip_probability must lie in [0, 1]")
        if self.augmented_per_original < 0:
            raise ConfigurationError("augmented_per_original must be non-negative")
        if self.elastic is not None:
            spacing, disp = self.elastic
            if int(spacing) < 1 or disp < 0:
                raise ConfigurationError("elastic needs control spacing >= 1 and displacement >= 0")
            self.elastic = (int(spacing), float(disp))


@dataclass
class PairTransform:
    """One sampled augmentation. ``elastic_seed`` regenerates the displacement field on demand."""

    flip_axis: Optional[int] = None
    rotation_axis: Tuple[float, float, float] = (0.0, 0.0, 1.0)
    rotation_deg: float = 0.0
    elastic: Optional[Tuple[int, float]] = None
    elastic_seed: int = 0
    gamma: float = 1.0
    downsample: float = 1.0
    seed: int = 0
    draw_index: int = 0

    def elastic_field(self, shape: Sequence[int]) -> Optional[np.ndarray]:
        """Displacement (3, *shape) in voxels, or None when elastic warping is off.

        Control vectors on a coarse grid are drawn uniformly from a ball and
        upsampled with cubic spline interpolation.
        """
        if self.elastic is None or self.elastic[1] == 0.0:
            return None
        spacing, radius = self.elastic
        rng = np.random.default_rng(self.elastic_seed)
        ctrl_shape = tuple(math.ceil((n - 1) / spacing) + 1 for n in shape)
        count = int(np.prod(ctrl_shape))
        direction = rng.normal(size=(count, 3))
        direction /= np.linalg.norm(direction, axis=1, keepdims=True)
        r = radius * rng.uniform(size=(count, 1)) ** (1.0 / 3.0)
        ctrl = (direction * r).T.reshape((3, *ctrl_shape))
        grid = np.meshgrid(*[np.arange(n) / spacing for n in shape], indexing="ij")
        return np.stack([map_coordinates(ctrl[i], grid, order=3, mode="nearest") for i in range(3)])

    def is_geometric_identity(self) -> bool:
        return self.flip_axis is None and self.rotation_deg == 0.0 and (self.elastic is None or self.elastic[1] == 0.0)

    def to_dict(self) -> dict:
        return asdict(self)


def sample_transform(spec: AugmentSpec, draw_index: int) -> PairTransform:
    """Deterministic in ``(spec.seed, draw_index)``; every draw consumes the same stream positions."""
    rng = np.random.default_rng([spec.seed, draw_index])
    flip_coin = rng.uniform()
    plane = ("sagittal", "coronal")[int(rng.integers(2))]
    axis = rng.normal(size=3)
    angle = rng.uniform(-spec.rotation_max_deg, spec.rotation_max_deg)
    elastic_seed = int(rng.integers(2**31))
    u = rng.uniform(-spec.gamma_log_range, spec.gamma_log_range)
    s = rng.uniform(*spec.downsample_range)

    flip_axis = FLIP_AXES[plane] if spec.enable_flip and flip_coin < spec.flip_probability else None
    axis = axis / np.linalg.norm(axis)
    return PairTransform(
        flip_axis=flip_axis,
        rotation_axis=tuple(float(a) for a in axis),
        rotation_deg=float(angle),
        elastic=spec.elastic,
        elastic_seed=elastic_seed,
        gamma=float(math.exp(u)),
        downsample=float(s),
        seed=spec.seed,
        draw_index=draw_index,
    )


def _warp_coordinates(t: PairTransform, shape: Sequence[int]) -> np.ndarray:
    # output voxel x samples the input at R (x + d(x) - c) + c: elastic then rotation about the centre
    centre = (np.asarray(shape, dtype=np.float64) - 1.0) / 2.0
    grid = np.stack(np.meshgrid(*[np.arange(n, dtype=np.float64) for n in shape], indexing="ij"))
    disp = t.elastic_field(shape)
    if disp is not None:
        grid = grid + disp
    rel = grid.reshape(3, -1) - centre[:, None]
    rot = Rotation.from_rotvec(np.deg2rad(t.rotation_deg) * np.asarray(t.rotation_axis)).as_matrix()
    return (rot @ rel + centre[:, None]).reshape((3, *shape))


def _warp(a: np.ndarray, coords: Optional[np.ndarray], flip_axis: Optional[int]) -> np.ndarray:
    if flip_axis is not None:
        a = np.flip(a, axis=flip_axis)
    if coords is not None:
        a = map_coordinates(a.astype(np.float64), coords, order=1, mode="nearest")
    return np.ascontiguousarray(a)


def apply_geometric(t: PairTransform, pair: PairedSample) -> PairedSample:
    """Flip, rotate and warp both members with identical parameters; the grid is unchanged.

    Rotation and elastic warp share a single trilinear resampling pass.
    """
    shape = pair.low_field.shape
    needs_resample = t.rotation_deg != 0.0 or (t.elastic is not None and t.elastic[1] > 0)
    coords = _warp_coordinates(t, shape) if needs_resample else None
    low = pair.low_field.with_data(_warp(pair.low_field.data, coords, t.flip_axis))
    high = pair.high_field.with_data(_warp(pair.high_field.data, coords, t.flip_axis))
    return PairedSample(low, high, pair.subject_id)


def apply_gamma(v: Volume, gamma: float) -> Volume:
    if gamma <= 0:
        raise DomainError("gamma must be positive")
    if v.data.min() < 0.0 or v.data.max() > 1.0:
        raise DomainError("gamma correction expects intensities in [0, 1]")
    if gamma == 1.0:
        return v
    return v.with_data(np.power(v.data.astype(np.float64), gamma))


def apply_degrade(v: Volume, s: float) -> Volume:
    """Trilinear downsample to ``ceil(shape / s)`` then back to the original grid."""
    if s < 1.0:
        raise DomainError("downsample factor must be >= 1")
    small = tuple(math.ceil(n / s) for n in v.shape)
    if small == v.shape:
        return v
    return v.with_data(resample_array(resample_array(v.data, small), v.shape))


def apply_transform(t: PairTransform, pair: PairedSample, subject_id: str = None) -> PairedSample:
    out = apply_geometric(t, pair)
    low = apply_degrade(apply_gamma(out.low_field, t.gamma), t.downsample)
    return PairedSample(low, out.high_field, subject_id or pair.subject_id)


def augmented_id(subject_id: str, k: int) -> str:
    return f"{subject_id}_aug{k}"


def augment_with_transforms(pairs: Sequence[PairedSample], spec: AugmentSpec) -> List[Tuple[PairedSample, Optional[PairTransform]]]:
    """Originals first (transform None), then ``augmented_per_original`` new pairs per original in input order."""
    out: List[Tuple[PairedSample, Optional[PairTransform]]] = [(p, None) for p in pairs]
    draw = 0
    for p in pairs:
        for k in range(spec.augmented_per_original):
            t = sample_transform(spec, draw)
            draw += 1
            out.append((apply_transform(t, p, augmented_id(p.subject_id, k)), t))
    return out


def augment_dataset(pairs: Sequence[PairedSample], spec: AugmentSpec) -> List[PairedSample]:
    return [p for p, _ in augment_with_transforms(pairs, spec)]


__all__ = [
    "AugmentSpec",
    "FLIP_AXES",
    "PairTransform",
    "apply_degrade",
    "apply_gamma",
    "apply_geometric",
    "apply_transform",
    "augment_dataset",
    "augment_with_transforms",
    "sample_transform",
]
