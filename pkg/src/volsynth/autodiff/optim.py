"""Adam with bias correction, and WGAN weight clipping."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Mapping, Optional, Sequence

import numpy as np

from .tensor import Parameter


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: Sequence[Parameter], grads: Mapping, state: AdamState, lr: float) -> None:
    """One Adam update of every trainable parameter in ``params``.

    ``grads`` maps parameters to gradient arrays; missing entries count as zero.
    Parameter arrays are replaced rather than modified in place.
    """
    if lr <= 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    for p in params:
        if not p.requires_grad:
            continue
        g: Optional[np.ndarray] = grads.get(p)
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.shape:
            raise ValueError(f"gradient for {p.name} has shape {g.shape}, parameter has {p.shape}")
        m = state.m.get(p.name)
        v = state.v.get(p.name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        dt = p.data.dtype.type
        m = dt(state.beta1) * m + dt(1.0 - state.beta1) * g
        v = dt(state.beta2) * v + dt(1.0 - state.beta2) * (g * g)
        state.m[p.name], state.v[p.name] = m, v
        update = (m / dt(bc1)) / (np.sqrt(v / dt(bc2)) + dt(state.eps))
        p.data = (p.data - dt(lr) * update).astype(p.data.dtype, copy=False)


def clip_weights(params: Sequence[Parameter], c: float) -> None:
    """Clamp every parameter into ``[-c, c]``."""
    if c <= 0:
        raise ValueError(f"clip constant must be positive, got {c}")
    for p in params:
        p.data = np.clip(p.data, -c, c).astype(p.data.dtype, copy=False)
