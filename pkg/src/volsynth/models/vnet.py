"""V-Net generator with a nearest-neighbour-upsampling decoder, and the half-V-Net critic."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import List, Optional, Sequence, Tuple

from ..autodiff import Tensor, activation, combine, global_sum_pool, linear, upsample_nn
from ..errors import ConfigurationError, ShapeError
from .base import Model

#: convolutions per encoder stage in the original V-Net; deeper stages repeat the last entry
VNET_STAGE_CONVS = (1, 2, 3, 3, 3)


@dataclass
class VNetConfig:
    levels: int = 5
    base_channels: int = 16
    convs_per_level: Optional[List[int]] = None
    kernel: Tuple[int, int, int] = (5, 5, 5)
    in_channels: int = 1
    out_channels: int = 1
    # add the input to the output (learn a correction); see README
    residual_output: bool = False

    def __post_init__(self):
        self.kernel = tuple(int(k) for k in self.kernel)
        if self.convs_per_level is None:
            self.convs_per_level = [VNET_STAGE_CONVS[min(i, len(VNET_STAGE_CONVS) - 1)] for i in range(self.levels)]
        self.convs_per_level = [int(n) for n in self.convs_per_level]
        self.validate()

    def validate(self):
        if self.levels < 2:
            raise ConfigurationError(f"levels must be >= 2, got {self.levels}")
        if len(self.convs_per_level) != self.levels or min(self.convs_per_level) < 1:
            raise ConfigurationError(f"convs_per_level must list >= 1 conv for each of {self.levels} levels")
        if len(self.kernel) != 3 or len(set(self.kernel)) != 1 or self.kernel[0] % 2 == 0:
            raise ConfigurationError(f"kernel must be cubic with odd size, got {self.kernel}")
        if self.base_channels < 1 or self.in_channels < 1 or self.out_channels < 1:
            raise ConfigurationError("channel counts must be positive")
        if self.base_channels % self.in_channels:
            raise ConfigurationError("base_channels must be a multiple of in_channels (input residual is tiled)")
        if self.residual_output and self.in_channels != self.out_channels:
            raise ConfigurationError("residual_output needs in_channels == out_channels")

    def channels(self, level: int) -> int:
        return self.base_channels * 2**level

    @property
    def bottleneck_channels(self) -> int:
        return self.channels(self.levels - 1)

    @property
    def divisor(self) -> int:
        return 2 ** (self.levels - 1)

    def check_spatial(self, spatial: Sequence[int]):
        bad = [n for n in spatial if n % self.divisor or n <= 2]
        if bad:
            raise ShapeError(
                f"spatial dims {tuple(spatial)} must be > 2 and divisible by 2^(levels-1) = {self.divisor}"
            )


@dataclass
class CriticConfig:
    """Encoder half of a V-Net followed by sum-pool -> ReLU -> linear(-> 1)."""

    encoder: VNetConfig = field(default_factory=VNetConfig)

    @property
    def head_width(self) -> int:
        return self.encoder.bottleneck_channels


class _Encoder:
    """Encoder stages shared by the generator and the critic (mixin over Model)."""

    cfg: VNetConfig

    def _build_encoder(self):
        cfg = self.cfg
        k = cfg.kernel
        for level in range(cfg.levels):
            c = cfg.channels(level)
            if level == 0:
                c_in = cfg.in_channels
            else:
                self._conv_params(f"enc{level}.down", cfg.channels(level - 1), c, (2, 2, 2))
                self._prelu_param(f"enc{level}.down_act", c)
                c_in = c
            for i in range(cfg.convs_per_level[level]):
                self._conv_params(f"enc{level}.conv{i}", c_in if i == 0 else c, c, k)
                self._prelu_param(f"enc{level}.act{i}", c)
            self._prelu_param(f"enc{level}.act_res", c)

    def _chain(self, prefix: str, h: Tensor, n: int) -> Tensor:
        pad = self.cfg.kernel[0] // 2
        for i in range(n):
            h = self._conv(f"{prefix}.conv{i}", h, padding=pad)
            h = activation(h, "prelu", self[f"{prefix}.act{i}"])
        return h

    def _encode(self, x: Tensor):
        cfg = self.cfg
        if x.ndim != 5 or x.shape[1] != cfg.in_channels:
            raise ShapeError(f"expected input (N, {cfg.in_channels}, D, H, W), got {x.shape}")
        cfg.check_spatial(x.shape[2:])
        skips = []
        h = x
        for level in range(cfg.levels):
            if level == 0:
                reps = cfg.channels(0) // cfg.in_channels
                residual = x if reps == 1 else combine([x] * reps, "concat_channels")
                y = self._chain("enc0", x, cfg.convs_per_level[0])
            else:
                residual = activation(self._conv(f"enc{level}.down", h, stride=2), "prelu", self[f"enc{level}.down_act"])
                y = self._chain(f"enc{level}", residual, cfg.convs_per_level[level])
            h = activation(combine([y, residual], "add"), "prelu", self[f"enc{level}.act_res"])
            skips.append(h)
        return h, skips


class VNet(_Encoder, Model):
    """Residual V-Net; transposed convolutions replaced by NN upsampling + conv.

    Decoder stage ``l`` upsamples, convolves down to ``C_l`` channels,
    concatenates the encoder output of stage ``l`` (giving ``2 C_l``), runs a
    residual conv chain and hands ``2 C_l`` channels on. A final 1x1x1 conv
    maps to ``out_channels``.
    """

    arch = "vnet"

    def __init__(self, cfg: VNetConfig = None, seed: int = 0):
        super().__init__(seed)
        self.cfg = cfg or VNetConfig()
        cfg = self.cfg
        self._build_encoder()
        k = cfg.kernel
        width = cfg.bottleneck_channels
        for level in reversed(range(cfg.levels - 1)):
            c = cfg.channels(level)
            self._conv_params(f"dec{level}.up", width, c, k)
            self._prelu_param(f"dec{level}.up_act", c)
            for i in range(cfg.convs_per_level[level]):
                self._conv_params(f"dec{level}.conv{i}", 2 * c, 2 * c, k)
                self._prelu_param(f"dec{level}.act{i}", 2 * c)
            self._prelu_param(f"dec{level}.act_res", 2 * c)
            width = 2 * c
        w_out, _ = self._conv_params("out", width, cfg.out_channels, (1, 1, 1))
        if cfg.residual_output:
            # start as the identity map so training only learns the correction
            w_out.data = w_out.data * 0

    def config_dict(self) -> dict:
        return asdict(self.cfg)

    def forward(self, x: Tensor) -> Tensor:
        cfg = self.cfg
        pad = cfg.kernel[0] // 2
        h, skips = self._encode(x)
        for level in reversed(range(cfg.levels - 1)):
            u = self._conv(f"dec{level}.up", upsample_nn(h, 2), padding=pad)
            u = activation(u, "prelu", self[f"dec{level}.up_act"])
            cat = combine([u, skips[level]], "concat_channels")
            y = self._chain(f"dec{level}", cat, cfg.convs_per_level[level])
            h = activation(combine([y, cat], "add"), "prelu", self[f"dec{level}.act_res"])
        out = self._conv("out", h)
        if cfg.residual_output:
            out = combine([out, x], "add")
        return out


class Critic(_Encoder, Model):
    """Wasserstein critic: V-Net encoder -> global sum pool -> ReLU -> linear. No sigmoid."""

    arch = "critic"

    def __init__(self, cfg: CriticConfig = None, seed: int = 0):
        super().__init__(seed)
        self.critic_cfg = cfg or CriticConfig()
        self.cfg = self.critic_cfg.encoder
        self._build_encoder()
        self._linear_params("head", self.critic_cfg.head_width, 1)

    def config_dict(self) -> dict:
        return {"encoder": asdict(self.cfg)}

    def forward(self, x: Tensor) -> Tensor:
        h, _ = self._encode(x)
        pooled = activation(global_sum_pool(h), "relu")
        return linear(pooled, self["head.w"], self["head.b"])


def build_vnet(cfg: VNetConfig = None, seed: int = 0, input_shape: Optional[Sequence[int]] = None) -> VNet:
    """Build a seeded V-Net; ``input_shape`` (spatial) is validated if given."""
    cfg = cfg or VNetConfig()
    if input_shape is not None:
        try:
            cfg.check_spatial(input_shape)
        except ShapeError as exc:
            raise ConfigurationError(str(exc)) from None
    return VNet(cfg, seed)


def build_critic(cfg: CriticConfig = None, seed: int = 0) -> Critic:
    return Critic(cfg or CriticConfig(), seed)
