"""Patch sampling and the supervised / Wasserstein-GAN optimization loops."""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..autodiff import AdamState, ModelWeights, Tape, adam_step, backward, clip_weights, no_tape
from ..errors import ConfigurationError, SizeError, TrainingDivergedError
from ..losses import combined_loss, critic_loss, generator_adv_loss, mae_loss, perceptual_loss
from ..models import Critic, Model, PerceptualEncoder, VNet, WATNet
from ..volgrid import PairedSample
from .config import (
    SEED_CRITIC,
    SEED_GENERATOR,
    SEED_PERCEPTUAL,
    SEED_SAMPLING,
    TrainConfig,
    derive_seed,
)

LOG_COLUMNS = ("step", "epoch", "phase", "total", "mae", "perceptual", "adv", "critic")


@dataclass
class TrainLog:
    """Per-step loss rows; wall-clock stamps are kept apart so the CSV stays reproducible."""

    rows: List[dict] = field(default_factory=list)
    timestamps: List[float] = field(default_factory=list)
    critic_weights: Optional[ModelWeights] = None

    def append(self, step: int, epoch: int, phase: str, total: float, terms: Dict[str, float]):
        if self.rows and step <= self.rows[-1]["step"]:
            raise ValueError("log steps must strictly increase")
        row = {"step": step, "epoch": epoch, "phase": phase, "total": total}
        row.update(terms)
        self.rows.append(row)
        self.timestamps.append(time.time())

    def generator_rows(self) -> List[dict]:
        return [r for r in self.rows if r["phase"] == "generator"]

    def epoch_means(self, term: str = "total", phase: str = "generator") -> List[float]:
        by_epoch: Dict[int, List[float]] = {}
        for r in self.rows:
            if r["phase"] == phase and term in r:
                by_epoch.setdefault(r["epoch"], []).append(r[term])
        return [float(np.mean(by_epoch[e])) for e in sorted(by_epoch)]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(LOG_COLUMNS)
            for r in self.rows:
                w.writerow(["" if r.get(c) is None else (repr(r[c]) if isinstance(r.get(c), float) else r[c])
                            for c in LOG_COLUMNS])


# model construction ----------------------------------------------------------

def build_generator(cfg: TrainConfig) -> Model:
    seed = derive_seed(cfg.seed, SEED_GENERATOR)
    gcfg = cfg.generator_config()
    if cfg.arch == "watnet":
        model = WATNet(gcfg, seed)
        _check_plane(model, cfg.patch_shape[:2])
    else:
        try:
            gcfg.check_spatial(cfg.patch_shape)
        except Exception as exc:
            raise ConfigurationError(f"patch shape does not fit the generator: {exc}") from None
        model = VNet(gcfg, seed)
    return model


def _check_plane(model: WATNet, plane):
    d = model.cfg.divisor
    if any(n % d or n < 2 * d for n in plane):
        raise ConfigurationError(f"watnet patch plane {tuple(plane)} must be a multiple of {d} and >= {2 * d}")


def build_critic_for(cfg: TrainConfig) -> Critic:
    ccfg = cfg.critic_config()
    try:
        ccfg.encoder.check_spatial(cfg.patch_shape)
    except Exception as exc:
        raise ConfigurationError(f"patch shape does not fit the critic: {exc}") from None
    return Critic(ccfg, derive_seed(cfg.seed, SEED_CRITIC))


def build_perceptual_for(cfg: TrainConfig) -> PerceptualEncoder:
    return PerceptualEncoder(cfg.perceptual_config(), derive_seed(cfg.seed, SEED_PERCEPTUAL))


def weights_with_meta(model: Model, cfg: TrainConfig) -> ModelWeights:
    w = model.weights()
    w.meta = {"variant": cfg.variant, "patch_shape": list(cfg.patch_shape), "seed": cfg.seed}
    return w


# sampling ----------------------------------------------------------------------

def sampling_rng(cfg: TrainConfig) -> np.random.Generator:
    return np.random.default_rng(derive_seed(cfg.seed, SEED_SAMPLING))


def _check_fits(pairs: Sequence[PairedSample], patch: Sequence[int]):
    for p in pairs:
        if any(q > n for q, n in zip(patch, p.low_field.shape)):
            raise SizeError(f"patch {tuple(patch)} does not fit {p.subject_id} of shape {p.low_field.shape}")


def sample_training_batch(pairs: Sequence[PairedSample], cfg: TrainConfig, rng: np.random.Generator,
                          indices: Optional[Sequence[int]] = None) -> Tuple[np.ndarray, np.ndarray]:
    """Cut one patch per chosen volume at a uniformly drawn corner, same corner for both members.

    3D variants return (N, 1, *patch) batches. ``watnet`` returns (N, 3, H, W)
    low-field slice stacks and (N, 1, H, W) high-field centre slices.
    """
    patch = cfg.patch_shape
    _check_fits(pairs, patch)
    if indices is None:
        indices = rng.integers(len(pairs), size=cfg.batch_size)
    lows, highs = [], []
    for i in indices:
        p = pairs[int(i)]
        shape = p.low_field.shape
        corner = [int(rng.integers(n - q + 1)) for n, q in zip(shape, patch)]
        sl = tuple(slice(c, c + q) for c, q in zip(corner, patch))
        low = p.low_field.data[sl]
        high = p.high_field.data[sl]
        if cfg.arch == "watnet":
            lows.append(np.moveaxis(low, 2, 0))
            highs.append(high[None, :, :, 1])
        else:
            lows.append(low[None])
            highs.append(high[None])
    return np.ascontiguousarray(np.stack(lows)), np.ascontiguousarray(np.stack(highs))


def epoch_batches(n_volumes: int, cfg: TrainConfig, rng: np.random.Generator) -> List[np.ndarray]:
    """One epoch: every volume ``patches_per_volume_per_epoch`` times, shuffled, chunked into batches."""
    order = np.repeat(np.arange(n_volumes), cfg.patches_per_volume_per_epoch)
    rng.shuffle(order)
    return [order[i : i + cfg.batch_size] for i in range(0, len(order), cfg.batch_size)]


def steps_per_epoch(n_volumes: int, cfg: TrainConfig) -> int:
    return math.ceil(n_volumes * cfg.patches_per_volume_per_epoch / cfg.batch_size)


# loops -----------------------------------------------------------------------

def _check_finite(value: float, step: int, epoch: int, what: str, terms: dict):
    if not math.isfinite(value):
        raise TrainingDivergedError(f"{what} became {value} at step {step} (epoch {epoch}); terms: {terms}")


def _generator_step(model, enc, critic, cfg, low, high, state, step, epoch):
    params = model.trainable_parameters()
    with Tape() as tape:
        pred = model(low)
        terms = {"mae": mae_loss(pred, high)}
        if cfg.variant in ("vnet_sseg", "vnet_gan"):
            terms["perceptual"] = perceptual_loss(enc, pred, high)
        if cfg.variant == "vnet_gan":
            terms["adv"] = generator_adv_loss(critic, pred)
        loss, breakdown = combined_loss(cfg.loss_weights, terms, cfg.variant)
    _check_finite(breakdown.total, step, epoch, "generator loss", breakdown.terms)
    grads = backward(tape, loss, params)
    for p, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingDivergedError(f"non-finite gradient for {p.name} at step {step} (epoch {epoch})")
    adam_step(params, grads, state, cfg.lr)
    return breakdown


def _critic_step(model, critic, low, high, state, cfg, step, epoch) -> float:
    with no_tape():
        fake = model(low).data
    params = critic.trainable_parameters()
    with Tape() as tape:
        loss = critic_loss(critic, high, fake)
    value = loss.item()
    _check_finite(value, step, epoch, "critic loss", {"critic": value})
    adam_step(params, backward(tape, loss, params), state, cfg.lr)
    clip_weights(params, cfg.clip_c)
    return value


def train_supervised(cfg: TrainConfig, pairs: Sequence[PairedSample],
                     on_step: Optional[Callable[[dict], None]] = None) -> Tuple[ModelWeights, TrainLog]:
    """Adam on the variant's combined loss for ``cfg.epochs`` epochs; deterministic in ``cfg.seed``."""
    if cfg.variant not in ("vnet", "vnet_sseg", "watnet"):
        raise ConfigurationError(f"train_supervised does not handle variant {cfg.variant!r}")
    if not pairs:
        raise ConfigurationError("no training pairs")
    _check_fits(pairs, cfg.patch_shape)
    model = build_generator(cfg)
    enc = build_perceptual_for(cfg) if cfg.variant == "vnet_sseg" else None
    rng = sampling_rng(cfg)
    state = AdamState()
    log = TrainLog()
    step = 0
    for epoch in range(cfg.epochs):
        for idx in epoch_batches(len(pairs), cfg, rng):
            low, high = sample_training_batch(pairs, cfg, rng, idx)
            br = _generator_step(model, enc, None, cfg, low, high, state, step, epoch)
            log.append(step, epoch, "generator", br.total, br.terms)
            if on_step:
                on_step(log.rows[-1])
            step += 1
    return weights_with_meta(model, cfg), log


def train_gan(cfg: TrainConfig, pairs: Sequence[PairedSample], freeze_generator: bool = False,
              on_step: Optional[Callable[[dict], None]] = None, after_critic_step: Optional[Callable[[Critic], None]] = None
              ) -> Tuple[ModelWeights, TrainLog]:
    """Alternate ``critic_steps`` clipped critic updates with one generator update.

    Each critic update draws a fresh batch. With ``freeze_generator`` only the
    critic is trained (one epoch still counts its generator-step slots).
    The trained critic is returned in ``TrainLog.critic_weights``.
    """
    if cfg.variant != "vnet_gan":
        raise ConfigurationError(f"train_gan needs variant 'vnet_gan', got {cfg.variant!r}")
    if not pairs:
        raise ConfigurationError("no training pairs")
    _check_fits(pairs, cfg.patch_shape)
    model = build_generator(cfg)
    critic = build_critic_for(cfg)
    clip_weights(critic.trainable_parameters(), cfg.clip_c)
    enc = build_perceptual_for(cfg)
    rng = sampling_rng(cfg)
    g_state, c_state = AdamState(), AdamState()
    log = TrainLog()
    step = 0
    for epoch in range(cfg.epochs):
        for idx in epoch_batches(len(pairs), cfg, rng):
            for _ in range(cfg.critic_steps):
                c_low, c_high = sample_training_batch(pairs, cfg, rng, idx)
                value = _critic_step(model, critic, c_low, c_high, c_state, cfg, step, epoch)
                if after_critic_step:
                    after_critic_step(critic)
                log.append(step, epoch, "critic", value, {"critic": value})
                step += 1
            if not freeze_generator:
                low, high = sample_training_batch(pairs, cfg, rng, idx)
                br = _generator_step(model, enc, critic, cfg, low, high, g_state, step, epoch)
                log.append(step, epoch, "generator", br.total, br.terms)
                if on_step:
                    on_step(log.rows[-1])
                step += 1
    log.critic_weights = critic.weights()
    return weights_with_meta(model, cfg), log


def train(cfg: TrainConfig, pairs: Sequence[PairedSample], **kw) -> Tuple[ModelWeights, TrainLog]:
    """Route to the GAN loop for ``vnet_gan`` and to the supervised loop otherwise."""
    if cfg.variant == "vnet_gan":
        return train_gan(cfg, pairs, **kw)
    return train_supervised(cfg, pairs, **kw)
