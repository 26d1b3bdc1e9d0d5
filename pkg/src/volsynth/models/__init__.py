"""Generator, critic, perceptual encoder and WATNet baseline builders."""

from __future__ import annotations

from ..autodiff import ModelWeights, Tensor
from ..errors import IncompatibleCheckpointError
from .base import Model, PointwiseGenerator, count_params, frozen
from .perceptual import PerceptualConfig, PerceptualEncoder, extract_features
from .vnet import Critic, CriticConfig, VNet, VNetConfig, build_critic, build_vnet
from .watnet import WATNet, WatConfig, build_watnet
from .wavelet import HaarPyramid, haar_dwt2d, haar_idwt2d, haar_subbands


def forward_generator(model: Model, patch) -> Tensor:
    """Generator output for a (N, C, *spatial) patch batch; same shape as the input."""
    return model(patch)


def forward_critic(critic: Critic, patch) -> Tensor:
    """One unconstrained score per batch item, shape (N, 1)."""
    return critic(patch)


def build_model(arch: str, config: dict, seed: int = 0) -> Model:
    """Rebuild a model from its architecture tag and ``config_dict()``."""
    if arch == "vnet":
        return VNet(VNetConfig(**config), seed)
    if arch == "watnet":
        return WATNet(WatConfig(**config), seed)
    if arch == "critic":
        return Critic(CriticConfig(VNetConfig(**config["encoder"])), seed)
    if arch == "perceptual_encoder":
        return PerceptualEncoder(PerceptualConfig(**config), seed)
    if arch == "pointwise":
        return PointwiseGenerator(**config, seed=seed)
    raise IncompatibleCheckpointError(f"unknown architecture tag {arch!r}")


def model_from_weights(w: ModelWeights) -> Model:
    return build_model(w.arch, w.config).load_weights(w)


__all__ = [
    "Critic",
    "CriticConfig",
    "HaarPyramid",
    "Model",
    "PerceptualConfig",
    "PerceptualEncoder",
    "PointwiseGenerator",
    "VNet",
    "VNetConfig",
    "WATNet",
    "WatConfig",
    "build_critic",
    "build_model",
    "build_vnet",
    "build_watnet",
    "count_params",
    "extract_features",
    "forward_critic",
    "forward_generator",
    "frozen",
    "haar_dwt2d",
    "haar_idwt2d",
    "haar_subbands",
    "model_from_weights",
]
