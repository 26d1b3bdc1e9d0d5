"""Full-volume inference, evaluation helpers and checkpoint I/O."""

from __future__ import annotations

from typing import List, Optional, Sequence, Union

import numpy as np

from ..augment import apply_degrade
from ..autodiff import ModelWeights, no_tape
from ..autodiff import load_checkpoint as _load
from ..autodiff import save_checkpoint as _save
from ..errors import ConfigurationError, IncompatibleCheckpointError
from ..metrics import CONDITION_ORIGINAL, MetricReport, downsampled_condition, evaluate_pair
from ..models import Model, WATNet, model_from_weights
from ..volgrid import PairedSample, Volume, extract_patches, stitch_array
from .config import VARIANT_ARCH, TrainConfig

ModelLike = Union[Model, ModelWeights]


def _resolve(weights: ModelLike, cfg: Optional[TrainConfig]):
    model = model_from_weights(weights) if isinstance(weights, ModelWeights) else weights
    meta = weights.meta if isinstance(weights, ModelWeights) else {}
    if cfg is not None and model.arch != "pointwise" and model.arch != cfg.arch:
        raise ConfigurationError(f"weights hold a {model.arch!r} model but the config asks for {cfg.variant!r}")
    if cfg is not None:
        patch = cfg.patch_shape
        batch = cfg.infer_batch_size
    else:
        patch = tuple(meta.get("patch_shape", (32, 32, 3) if model.arch == "watnet" else (32, 32, 32)))
        batch = 4
    return model, tuple(int(n) for n in patch), batch


def _forward(model: Model, batch: np.ndarray) -> np.ndarray:
    with no_tape():
        return model(batch.astype(np.float32)).data


def _infer_3d(model: Model, data: np.ndarray, patch, batch_size: int) -> np.ndarray:
    shape = data.shape
    padded_shape = tuple(max(n, q) for n, q in zip(shape, patch))
    if padded_shape != shape:
        data = np.pad(data, [(0, p - n) for p, n in zip(padded_shape, shape)], mode="edge")
    layout, patches = extract_patches(data, patch, tuple(max(q // 2, 1) for q in patch))
    outs = []
    for i in range(0, len(patches), batch_size):
        chunk = np.stack(patches[i : i + batch_size])[:, None]
        outs.extend(o[0] for o in _forward(model, chunk))
    full = stitch_array(layout, outs)
    return full[tuple(slice(0, n) for n in shape)]


def _infer_slices(model: WATNet, data: np.ndarray, batch_size: int) -> np.ndarray:
    d = model.cfg.divisor
    h, w, nz = data.shape
    ph = max(-(-h // d) * d, 2 * d)
    pw = max(-(-w // d) * d, 2 * d)
    # edge-replicate one slice on each side for 3-slice context, and pad the plane to a valid size
    vol = np.pad(data, [(0, ph - h), (0, pw - w), (1, 1)], mode="edge")
    out = np.empty((h, w, nz), dtype=np.float32)
    for z0 in range(0, nz, batch_size):
        zs = range(z0, min(z0 + batch_size, nz))
        stack = np.stack([np.moveaxis(vol[:, :, z : z + 3], 2, 0) for z in zs])
        pred = _forward(model, stack)
        for j, z in enumerate(zs):
            out[:, :, z] = pred[j, 0, :h, :w]
    return out


def infer_volume(weights: ModelLike, low_field: Volume, cfg: Optional[TrainConfig] = None) -> Volume:
    """Synthesize the high-field volume; output grid equals the input grid.

    3D generators run on sliding patches with stride patch/2 and mean
    blending (volumes smaller than a patch are edge-padded). WATNet runs
    slice by slice along the last axis with edge slices replicated.
    """
    return _infer(*_resolve(weights, cfg), low_field)


def _infer(model: Model, patch, batch: int, low_field: Volume) -> Volume:
    data = np.asarray(low_field.data, dtype=np.float32)
    if model.arch == "watnet":
        out = _infer_slices(model, data, batch)
    else:
        out = _infer_3d(model, data, patch, batch)
    return low_field.with_data(out)


def evaluate_model(weights: ModelLike, pairs: Sequence[PairedSample], cfg: Optional[TrainConfig] = None,
                   fold: int = 0, s: Optional[float] = None) -> List[MetricReport]:
    """Infer every pair's low field (optionally degraded by ``s`` first) and score against its high field."""
    resolved = _resolve(weights, cfg)
    reports = []
    for p in pairs:
        low = p.low_field if s is None else apply_degrade(p.low_field, s)
        pred = _infer(*resolved, low)
        cond = CONDITION_ORIGINAL if s is None else downsampled_condition(s)
        reports.append(evaluate_pair(pred, p.high_field, subject_id=p.subject_id, condition=cond, fold=fold))
    return reports


def downsample_eval(weights: ModelLike, pairs: Sequence[PairedSample], s: float, cfg: Optional[TrainConfig] = None,
                    fold: int = 0) -> List[MetricReport]:
    """Reports for inputs degraded by factor ``s``, tagged ``downsampled_s{s}``."""
    if s < 1:
        raise ConfigurationError("downsample factor must be >= 1")
    return evaluate_model(weights, pairs, cfg, fold, s)


def save_checkpoint(weights: ModelWeights, path) -> None:
    _save(weights, path)


def load_checkpoint(path, variant: Optional[str] = None) -> ModelWeights:
    """Load weights; with ``variant`` set the stored architecture must match it."""
    w = _load(path)
    if variant is not None:
        want = VARIANT_ARCH.get(variant)
        if want is None:
            raise ConfigurationError(f"unknown variant {variant!r}")
        if w.arch != want:
            raise IncompatibleCheckpointError(f"checkpoint holds a {w.arch!r} model, variant {variant!r} needs {want!r}")
    return w
