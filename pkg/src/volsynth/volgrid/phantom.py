"""Synthetic low-field / high-field phantom pairs for desk-scale experiments."""

from __future__ import annotations

from typing import Sequence

import numpy as np
from scipy.ndimage import gaussian_filter

from ..errors import ShapeError
from .volume import PairedSample, Volume, normalize_intensity

# tissue intensities of the high-field phantom before normalization
BACKGROUND, CSF, GREY, WHITE, LESION = 0.0, 0.25, 0.6, 0.9, 0.12
# normalized radius at which each tissue band ends
WHITE_EDGE, GREY_EDGE = 0.55, 0.8

LOW_FIELD_BLUR_SIGMA = 1.0
LOW_FIELD_CONTRAST_EXPONENT = 0.7
LOW_FIELD_NOISE_SIGMA = 0.02


def _ellipsoid_radius(shape, rng: np.random.Generator) -> np.ndarray:
    axes = np.array([0.85, 0.9, 0.8]) * rng.uniform(0.95, 1.05, size=3)
    centre = rng.uniform(-0.03, 0.03, size=3)
    grids = np.meshgrid(
        *[(np.arange(n) + 0.5) / (n / 2.0) - 1.0 for n in shape], indexing="ij"
    )
    return np.sqrt(sum(((g - c) / a) ** 2 for g, c, a in zip(grids, centre, axes)))


def phantom_tissue(shape, rng: np.random.Generator, lesion_count: int):
    """High-field intensities and the lesion mask, before normalization."""
    r = _ellipsoid_radius(shape, rng)
    img = np.full(shape, BACKGROUND)
    img[r <= 1.0] = CSF
    img[r <= GREY_EDGE] = GREY
    img[r <= WHITE_EDGE] = WHITE

    lesions = np.zeros(shape, dtype=bool)
    idx = np.indices(shape).astype(np.float64)
    candidates = np.argwhere(r <= 0.8 * WHITE_EDGE)
    scale = min(shape) / 32.0
    for _ in range(lesion_count):
        centre = candidates[rng.integers(len(candidates))] + rng.uniform(-0.5, 0.5, size=3)
        radius = rng.uniform(1.0, 2.5) * scale
        d2 = sum((idx[a] - centre[a]) ** 2 for a in range(3))
        lesions |= d2 <= radius**2
    img[lesions] = LESION
    return img, lesions


def make_phantom_pair(seed: int, shape: Sequence[int] = (32, 32, 32), lesion_count: int = 3,
                      spacing_mm=(0.7, 0.7, 0.7)) -> PairedSample:
    """Deterministic phantom pair.

    The high-field member is a nested-ellipsoid head (CSF, grey and white matter
    bands) with small hypointense lesions. The low-field member is the same image
    blurred, contrast-compressed by a power law and corrupted with Gaussian noise.
    Both are min-max normalized to [0, 1].
    """
    shape = tuple(int(n) for n in shape)
    if len(shape) != 3 or min(shape) < 16:
        raise ShapeError(f"phantom shape must be >= 16 per axis, got {shape}")
    rng = np.random.default_rng(seed)
    high, _ = phantom_tissue(shape, rng, lesion_count)

    low = gaussian_filter(high, sigma=LOW_FIELD_BLUR_SIGMA, mode="nearest")
    low = np.clip(low, 0.0, None) ** LOW_FIELD_CONTRAST_EXPONENT
    low = low + rng.normal(0.0, LOW_FIELD_NOISE_SIGMA, size=shape)

    high_v = normalize_intensity(Volume(high, spacing_mm), 0.0, 100.0)
    low_v = normalize_intensity(Volume(low, spacing_mm), 0.0, 100.0)
    return PairedSample(low_v, high_v, subject_id=f"sub-{seed:03d}")
