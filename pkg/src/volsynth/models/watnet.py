"""Simplified WATNet-style 2D encoder-decoder with Haar subband injection.

This is a re-creation, not the original network: depth, widths and the
injection-by-concatenation scheme are choices of this package.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import List, Optional

import numpy as np

from ..autodiff import Tensor, activation, combine, conv, upsample_nn
from ..errors import ConfigurationError, ShapeError
from .base import Model
from .wavelet import HAAR_FILTERS


@dataclass
class WatConfig:
    depth: int = 4
    widths: Optional[List[int]] = None
    kernel: int = 3
    in_slices: int = 3
    inject_wavelets: bool = True
    # predict a correction to the centre input slice
    residual_output: bool = True

    def __post_init__(self):
        if self.widths is None:
            self.widths = [64] * self.depth
        self.widths = [int(w) for w in self.widths]
        if self.depth < 1 or len(self.widths) != self.depth:
            raise ConfigurationError(f"need one width per level (depth {self.depth}), got {self.widths}")
        if self.in_slices != 3:
            raise ConfigurationError("WATNet takes exactly 3 adjacent slices as input channels")
        if self.kernel % 2 == 0:
            raise ConfigurationError("kernel size must be odd")

    @property
    def wavelet_levels(self) -> int:
        return self.depth - 1

    @property
    def divisor(self) -> int:
        return 2 ** (self.depth - 1)


class WATNet(Model):
    """At encoder level ``l >= 1`` the four level-``l`` Haar subbands of the centre
    slice are concatenated onto the downsampled feature map before convolution."""

    arch = "watnet"

    def __init__(self, cfg: WatConfig = None, seed: int = 0):
        super().__init__(seed)
        self.cfg = cfg or WatConfig()
        cfg = self.cfg
        k = (cfg.kernel, cfg.kernel)
        w = cfg.widths
        self._conv_params("enc0.conv0", cfg.in_slices, w[0], k)
        self._prelu_param("enc0.act0", w[0])
        self._conv_params("enc0.conv1", w[0], w[0], k)
        self._prelu_param("enc0.act1", w[0])
        for level in range(1, cfg.depth):
            self._conv_params(f"enc{level}.down", w[level - 1], w[level], k)
            self._prelu_param(f"enc{level}.down_act", w[level])
            self._conv_params(f"enc{level}.conv0", w[level] + 4, w[level], k)
            self._prelu_param(f"enc{level}.act0", w[level])
            self._conv_params(f"enc{level}.conv1", w[level], w[level], k)
            self._prelu_param(f"enc{level}.act1", w[level])
        for level in reversed(range(cfg.depth - 1)):
            self._conv_params(f"dec{level}.up", w[level + 1], w[level], k)
            self._prelu_param(f"dec{level}.up_act", w[level])
            self._conv_params(f"dec{level}.conv0", 2 * w[level], w[level], k)
            self._prelu_param(f"dec{level}.act0", w[level])
        w_out, _ = self._conv_params("out", w[0], 1, (1, 1))
        if cfg.residual_output:
            w_out.data = w_out.data * 0

    def config_dict(self) -> dict:
        return asdict(self.cfg)

    def _block(self, name: str, x: Tensor, stride: int = 1) -> Tensor:
        pad = self.cfg.kernel // 2
        return self._conv(name, x, stride=stride, padding=pad)

    def forward(self, x: Tensor) -> Tensor:
        cfg = self.cfg
        if x.ndim != 4 or x.shape[1] != cfg.in_slices:
            raise ShapeError(f"expected (N, 3, H, W) slice stacks, got {x.shape}")
        if any(n % cfg.divisor or n < 2 * cfg.divisor for n in x.shape[2:]):
            raise ShapeError(f"in-plane size {x.shape[2:]} must be a multiple of {cfg.divisor} and >= {2 * cfg.divisor}")
        dt = x.dtype
        select = np.zeros((1, 3, 1, 1), dtype=dt)
        select[0, 1] = 1.0
        centre = conv(x, Tensor(select))
        w_ll = Tensor(HAAR_FILTERS[:1].reshape(1, 1, 2, 2).astype(dt))
        w_all = Tensor(HAAR_FILTERS.reshape(4, 1, 2, 2).astype(dt))

        h = activation(self._block("enc0.conv0", x), "prelu", self["enc0.act0"])
        h = activation(self._block("enc0.conv1", h), "prelu", self["enc0.act1"])
        skips = [h]
        ll = centre
        for level in range(1, cfg.depth):
            bands = conv(ll, w_all, None, stride=2)
            ll = conv(ll, w_ll, None, stride=2)
            if not cfg.inject_wavelets:
                bands = Tensor(np.zeros(bands.shape, dtype=dt))
            d = activation(self._block(f"enc{level}.down", h, stride=2), "prelu", self[f"enc{level}.down_act"])
            h = combine([d, bands], "concat_channels")
            h = activation(self._block(f"enc{level}.conv0", h), "prelu", self[f"enc{level}.act0"])
            h = activation(self._block(f"enc{level}.conv1", h), "prelu", self[f"enc{level}.act1"])
            skips.append(h)
        for level in reversed(range(cfg.depth - 1)):
            u = activation(self._block(f"dec{level}.up", upsample_nn(h, 2)), "prelu", self[f"dec{level}.up_act"])
            h = combine([u, skips[level]], "concat_channels")
            h = activation(self._block(f"dec{level}.conv0", h), "prelu", self[f"dec{level}.act0"])
        out = self._conv("out", h)
        if cfg.residual_output:
            out = combine([out, centre], "add")
        return out


def build_watnet(cfg: WatConfig = None, seed: int = 0, input_shape=None) -> WATNet:
    cfg = cfg or WatConfig()
    if input_shape is not None and any(n % cfg.divisor for n in input_shape):
        raise ConfigurationError(f"in-plane size {tuple(input_shape)} is not divisible by {cfg.divisor}")
    return WATNet(cfg, seed)
