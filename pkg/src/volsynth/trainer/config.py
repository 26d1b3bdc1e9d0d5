"""Training configuration, presets and seed derivation."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional, Tuple

import numpy as np

from ..augment import AugmentSpec
from ..errors import ConfigurationError
from ..losses import LossWeights
from ..models import CriticConfig, PerceptualConfig, VNetConfig, WatConfig

VARIANTS = ("vnet", "vnet_sseg", "vnet_gan", "watnet")
DEFAULT_LR = {"vnet": 1e-3, "vnet_sseg": 1e-3, "vnet_gan": 1e-3, "watnet": 1e-4}
#: generator architecture tag per variant
VARIANT_ARCH = {"vnet": "vnet", "vnet_sseg": "vnet", "vnet_gan": "vnet", "watnet": "watnet"}

# stream tags for derive_seed
SEED_GENERATOR, SEED_CRITIC, SEED_PERCEPTUAL, SEED_SAMPLING, SEED_FOLD, SEED_AUGMENT = range(6)


def derive_seed(seed: int, *tags: int) -> int:
    """Independent 32-bit seed for a named sub-stream of ``seed``."""
    return int(np.random.SeedSequence([int(seed), *[int(t) for t in tags]]).generate_state(1)[0])


@dataclass
class TrainConfig:
    variant: str = "vnet"
    lr: Optional[float] = None  # None -> per-variant default
    epochs: int = 200
    batch_size: int = 4
    patch_shape: Optional[Tuple[int, int, int]] = None  # None -> 32^3, or (32, 32, 3) for watnet
    patches_per_volume_per_epoch: int = 8
    loss_weights: LossWeights = field(default_factory=LossWeights)
    seed: int = 0
    augmentation: Optional[AugmentSpec] = None
    critic_steps: int = 5
    clip_c: float = 0.01
    # keyword overrides for the generator / critic encoder / perceptual encoder configs
    model: dict = field(default_factory=dict)
    critic: dict = field(default_factory=dict)
    perceptual: dict = field(default_factory=dict)
    infer_batch_size: int = 4

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigurationError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.lr is None:
            self.lr = DEFAULT_LR[self.variant]
        if self.patch_shape is None:
            self.patch_shape = (32, 32, 3) if self.variant == "watnet" else (32, 32, 32)
        self.patch_shape = tuple(int(n) for n in self.patch_shape)
        if isinstance(self.loss_weights, dict):
            self.loss_weights = LossWeights(**self.loss_weights)
        if isinstance(self.augmentation, dict):
            self.augmentation = AugmentSpec(**self.augmentation)
        if not self.lr > 0:
            raise ConfigurationError("lr must be positive")
        if self.epochs < 1 or self.batch_size < 1 or self.patches_per_volume_per_epoch < 1:
            raise ConfigurationError("epochs, batch_size and patches_per_volume_per_epoch must be >= 1")
        if len(self.patch_shape) != 3 or min(self.patch_shape) < 1:
            raise ConfigurationError(f"patch_shape must be 3 positive integers, got {self.patch_shape}")
        if self.variant == "watnet" and self.patch_shape[2] != 3:
            raise ConfigurationError("watnet patches are (H, W, 3) slice stacks")
        if self.critic_steps < 1 or self.clip_c <= 0:
            raise ConfigurationError("critic_steps must be >= 1 and clip_c > 0")
        if self.infer_batch_size < 1:
            raise ConfigurationError("infer_batch_size must be >= 1")

    @property
    def arch(self) -> str:
        return VARIANT_ARCH[self.variant]

    def generator_config(self):
        try:
            if self.arch == "watnet":
                return WatConfig(**self.model)
            return VNetConfig(**self.model)
        except TypeError as exc:
            raise ConfigurationError(f"bad model config: {exc}") from None

    def critic_config(self) -> CriticConfig:
        enc = dict(asdict(self.generator_config()), residual_output=False)
        enc.update(self.critic)
        return CriticConfig(VNetConfig(**enc))

    def perceptual_config(self) -> PerceptualConfig:
        return PerceptualConfig(**self.perceptual)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["patch_shape"] = list(self.patch_shape)
        return d


DESK_VNET = {"levels": 3, "base_channels": 8, "kernel": [3, 3, 3], "residual_output": True}
DESK_WATNET = {"depth": 3, "widths": [16, 16, 16]}


def desk_config(variant: str = "vnet", **overrides) -> TrainConfig:
    """Small model, 32^3 patches, batch 4: trains in minutes on one CPU core."""
    base = dict(
        variant=variant,
        epochs=200,
        batch_size=4,
        patch_shape=(32, 32, 3) if variant == "watnet" else (32, 32, 32),
        patches_per_volume_per_epoch=4,
        model=dict(DESK_WATNET if variant == "watnet" else DESK_VNET),
    )
    base.update(overrides)
    return TrainConfig(**base)


def full_config(variant: str = "vnet", augmented: bool = False, **overrides) -> TrainConfig:
    """Full-size setting (64^3 patches, batch 40, 300 or 500 epochs). Needs GPU-class hardware."""
    base = dict(
        variant=variant,
        epochs=500 if augmented else 300,
        batch_size=40,
        patch_shape=(64, 64, 3) if variant == "watnet" else (64, 64, 64),
        patches_per_volume_per_epoch=8,
        augmentation=AugmentSpec() if augmented else None,
        model={} if variant == "watnet" else {"levels": 5, "base_channels": 16, "kernel": [5, 5, 5]},
    )
    base.update(overrides)
    return TrainConfig(**base)

