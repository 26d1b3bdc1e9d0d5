"""Frozen strided 3D conv encoder used as the perceptual-loss feature extractor."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Tuple

from ..autodiff import Tensor, activation, load_checkpoint
from ..errors import ConfigurationError, ShapeError
from .base import Model


@dataclass
class PerceptualConfig:
    widths: Tuple[int, int, int] = (16, 32, 64)
    feature_layer: int = 3
    in_channels: int = 1
    negative_slope: float = 0.2

    def __post_init__(self):
        self.widths = tuple(int(w) for w in self.widths)
        if len(self.widths) != 3:
            raise ConfigurationError("the perceptual encoder has exactly three stages")
        if not 1 <= self.feature_layer <= 3:
            raise ConfigurationError(f"feature_layer must be 1, 2 or 3, got {self.feature_layer}")


class PerceptualEncoder(Model):
    """Three stride-2 3x3x3 conv + leaky-ReLU stages whose weights never train.

    The default weights are seeded-random (a stand-in for a pretrained brain
    segmentation encoder); :meth:`from_file` loads exported weights instead.
    Features from stage ``feature_layer`` have spatial size ``input / 2**layer``.
    """

    arch = "perceptual_encoder"

    def __init__(self, cfg: PerceptualConfig = None, seed: int = 0):
        super().__init__(seed)
        self.cfg = cfg or PerceptualConfig()
        self.source = "seeded-random"
        c_in = self.cfg.in_channels
        for i, w in enumerate(self.cfg.widths):
            self._conv_params(f"stage{i + 1}", c_in, w, (3, 3, 3), trainable=False)
            c_in = w

    @classmethod
    def from_file(cls, path, cfg: PerceptualConfig = None) -> "PerceptualEncoder":
        w = load_checkpoint(path, expected_arch=cls.arch)
        if cfg is None:
            cfg = PerceptualConfig(**w.config) if w.config else PerceptualConfig()
        enc = cls(cfg)
        enc.load_weights(w)
        for p in enc.parameters():
            p.requires_grad = False
        enc.source = "loaded-from-file"
        return enc

    def config_dict(self) -> dict:
        return asdict(self.cfg)

    def forward(self, x: Tensor) -> Tensor:
        layer = self.cfg.feature_layer
        if x.ndim != 5 or x.shape[1] != self.cfg.in_channels:
            raise ShapeError(f"expected (N, {self.cfg.in_channels}, D, H, W), got {x.shape}")
        if any(n % 2**layer for n in x.shape[2:]):
            raise ShapeError(f"spatial dims {x.shape[2:]} must be divisible by {2**layer}")
        h = x
        for i in range(layer):
            h = self._conv(f"stage{i + 1}", h, stride=2, padding=1)
            h = activation(h, "leaky_relu", alpha=self.cfg.negative_slope)
        return h


def extract_features(enc: PerceptualEncoder, patch) -> Tensor:
    """Features of ``patch`` at the encoder's configured layer; gradients reach the patch only."""
    return enc(patch)
