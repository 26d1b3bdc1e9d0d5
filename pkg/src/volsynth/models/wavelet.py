"""Orthonormal 2D Haar transform, as plain numpy and as a fixed stride-2 convolution."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from ..autodiff import Tensor, conv
from ..errors import SizeError

Details = Tuple[np.ndarray, np.ndarray, np.ndarray]

# rows: LL, LH, HL, HH over the 2x2 block [[a, b], [c, d]]
HAAR_FILTERS = 0.5 * np.array(
    [
        [[1, 1], [1, 1]],
        [[1, -1], [1, -1]],
        [[1, 1], [-1, -1]],
        [[1, -1], [-1, 1]],
    ],
    dtype=np.float64,
)


@dataclass
class HaarPyramid:
    """``approx`` is the coarsest LL band; ``details[0]`` is the finest (LH, HL, HH) triple."""

    approx: np.ndarray
    details: List[Details]

    @property
    def levels(self) -> int:
        return len(self.details)

    def coefficients(self) -> List[np.ndarray]:
        out = [self.approx]
        for d in self.details:
            out.extend(d)
        return out


def haar_step(x: np.ndarray):
    a, b = x[0::2, 0::2], x[0::2, 1::2]
    c, d = x[1::2, 0::2], x[1::2, 1::2]
    return (a + b + c + d) / 2, ((a - b + c - d) / 2, (a + b - c - d) / 2, (a - b - c + d) / 2)


def haar_step_inverse(ll, details: Details) -> np.ndarray:
    lh, hl, hh = details
    out = np.empty((2 * ll.shape[0], 2 * ll.shape[1]), dtype=np.result_type(ll, np.float64))
    out[0::2, 0::2] = (ll + lh + hl + hh) / 2
    out[0::2, 1::2] = (ll - lh + hl - hh) / 2
    out[1::2, 0::2] = (ll + lh - hl - hh) / 2
    out[1::2, 1::2] = (ll - lh - hl + hh) / 2
    return out


def haar_dwt2d(image: np.ndarray, levels: int = 1) -> HaarPyramid:
    """Multi-level orthonormal Haar analysis; the LL band is recursed."""
    x = np.asarray(image, dtype=np.float64)
    if x.ndim != 2:
        raise SizeError(f"expected a 2D slice, got shape {x.shape}")
    if levels < 1 or any(n % 2**levels for n in x.shape):
        raise SizeError(f"slice shape {x.shape} is not divisible by 2^{levels}")
    details = []
    for _ in range(levels):
        x, d = haar_step(x)
        details.append(d)
    return HaarPyramid(x, details)


def haar_idwt2d(pyramid: HaarPyramid) -> np.ndarray:
    x = pyramid.approx
    for d in reversed(pyramid.details):
        x = haar_step_inverse(x, d)
    return x


def haar_subbands(x: Tensor) -> Tensor:
    """One Haar level of a (N, 1, H, W) tensor as a (N, 4, H/2, W/2) tensor [LL, LH, HL, HH].

    Implemented as a stride-2 convolution with constant filters, so it is
    differentiable with respect to ``x``.
    """
    w = Tensor(HAAR_FILTERS.reshape(4, 1, 2, 2).astype(x.dtype))
    return conv(x, w, None, stride=2)
