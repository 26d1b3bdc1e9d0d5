"""Training objectives: MAE, perceptual feature MAE, Wasserstein critic/generator terms."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Mapping, Tuple

from .autodiff import Tensor, as_tensor, combine, no_tape, reduce, scale
from .errors import ConfigurationError, ShapeError
from .models.base import Model, frozen
from .models.perceptual import PerceptualEncoder

#: loss terms each variant must supply
REQUIRED_TERMS = {
    "vnet": ("mae",),
    "watnet": ("mae",),
    "vnet_sseg": ("mae", "perceptual"),
    "vnet_gan": ("mae", "perceptual", "adv"),
}
_WEIGHT_OF = {"mae": "w_mae", "perceptual": "w_perceptual", "adv": "w_adv"}


@dataclass
class LossWeights:
    w_mae: float = 1.0
    w_perceptual: float = 1.0
    w_adv: float = 1.0

    def __post_init__(self):
        if min(self.w_mae, self.w_perceptual, self.w_adv) < 0:
            raise ConfigurationError("loss weights must be non-negative")
        if self.w_mae <= 0:
            raise ConfigurationError("w_mae must be positive for supervised training")

    def weight(self, term: str) -> float:
        return getattr(self, _WEIGHT_OF[term])


@dataclass
class LossBreakdown:
    total: float
    terms: Dict[str, float] = field(default_factory=dict)


def mae_loss(pred: Tensor, target) -> Tensor:
    """Mean over all elements of ``|target - pred|``."""
    target = as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeError(f"prediction {pred.shape} and target {target.shape} differ")
    return reduce(pred, "mean_abs_diff", target)


def perceptual_loss(enc: PerceptualEncoder, pred: Tensor, target) -> Tensor:
    """MAE between frozen-encoder features of ``pred`` and ``target``.

    The target branch is evaluated off-tape; encoder weights are held constant,
    so gradients reach ``pred`` only.
    """
    target = as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeError(f"prediction {pred.shape} and target {target.shape} differ")
    with frozen(enc):
        if target.requires_grad:
            target_feat = enc(target)
        else:
            with no_tape():
                target_feat = enc(target)
        pred_feat = enc(pred)
    return reduce(pred_feat, "mean_abs_diff", target_feat)


def critic_loss(critic: Model, real, fake) -> Tensor:
    """``-(mean D(real) - mean D(fake))``; the critic minimizes this."""
    real, fake = as_tensor(real), as_tensor(fake)
    if real.shape != fake.shape:
        raise ShapeError(f"real batch {real.shape} and fake batch {fake.shape} differ")
    d_real = reduce(critic(real), "mean")
    d_fake = reduce(critic(fake), "mean")
    return combine([scale(d_real, -1.0), d_fake], "add")


def generator_adv_loss(critic: Model, fake: Tensor) -> Tensor:
    """``-mean D(fake)`` with the critic frozen: the generator-dependent part of the adversarial loss."""
    with frozen(critic):
        return scale(reduce(critic(fake), "mean"), -1.0)


def combined_loss(weights: LossWeights, terms: Mapping[str, Tensor], variant: str = None) -> Tuple[Tensor, LossBreakdown]:
    """Weighted sum of the supplied terms, in the fixed order mae, perceptual, adv.

    Zero-weighted terms are logged but left out of the sum.
    """
    if variant is not None:
        if variant not in REQUIRED_TERMS:
            raise ConfigurationError(f"unknown variant {variant!r}")
        missing = [t for t in REQUIRED_TERMS[variant] if t not in terms]
        if missing:
            raise ConfigurationError(f"variant {variant!r} needs loss terms {missing}")
    unknown = set(terms) - set(_WEIGHT_OF)
    if unknown:
        raise ConfigurationError(f"unknown loss terms {sorted(unknown)}")
    if not terms:
        raise ConfigurationError("no loss terms supplied")

    parts = []
    values = {}
    total = 0.0
    for name in ("mae", "perceptual", "adv"):
        if name not in terms:
            continue
        t = terms[name]
        w = weights.weight(name)
        values[name] = t.item()
        total += w * values[name]
        if w == 0.0:
            continue
        parts.append(t if w == 1.0 else scale(t, w))
    out = parts[0] if len(parts) == 1 else combine(parts, "add")
    return out, LossBreakdown(total, values)
