"""Central finite-difference gradient checking against the tape."""

from __future__ import annotations

from typing import Callable, Dict, Optional, Sequence

import numpy as np

from ..errors import ContractError
from .tensor import Tape, Tensor, backward, no_tape


def numeric_gradient(fn: Callable[[], Tensor], t: Tensor, index, h: float = 1e-5) -> float:
    """(f(x + h) - f(x - h)) / 2h for a single entry of ``t``."""
    orig = t.data[index]
    t.data[index] = orig + h
    with no_tape():
        fp = float(fn().data)
    t.data[index] = orig - h
    with no_tape():
        fm = float(fn().data)
    t.data[index] = orig
    return (fp - fm) / (2.0 * h)


def grad_check_report(fn: Callable[[], Tensor], tensors: Sequence[Tensor], h: float = 1e-5,
                      max_entries: Optional[int] = None, seed: int = 0) -> Dict[str, float]:
    """Per-tensor relative error between tape and finite-difference gradients.

    The error for a tensor is ``max_i |a_i - n_i| / max(max|a|, max_i |n_i|)``
    where ``a`` is the full analytic gradient and ``i`` runs over the checked
    entries (all of them, or ``max_entries`` chosen at random).
    """
    for t in tensors:
        if t.data.dtype != np.float64:
            raise ContractError("gradient checks need float64 tensors; build them under precision(np.float64)")
        t.data = np.array(t.data, copy=True)
    with Tape() as tape:
        loss = fn()
    analytic = backward(tape, loss, tensors)
    rng = np.random.default_rng(seed)
    report = {}
    for k, t in enumerate(tensors):
        a = analytic[t]
        flat = np.arange(t.data.size)
        if max_entries is not None and t.data.size > max_entries:
            flat = np.sort(rng.choice(t.data.size, size=max_entries, replace=False))
        worst_abs = 0.0
        worst_num = 0.0
        for f in flat:
            idx = np.unravel_index(f, t.shape)
            num = numeric_gradient(fn, t, idx, h)
            worst_abs = max(worst_abs, abs(a[idx] - num))
            worst_num = max(worst_num, abs(num))
        scale = max(float(np.abs(a).max()) if a.size else 0.0, worst_num)
        key = t.name or f"tensor{k}"
        if key in report:
            key = f"{key}#{k}"
        report[key] = 0.0 if scale == 0.0 else worst_abs / scale
    return report


def grad_check(fn: Callable[[], Tensor], tensors: Sequence[Tensor], h: float = 1e-5,
               max_entries: Optional[int] = None, seed: int = 0) -> float:
    """Worst relative error over ``tensors``; see :func:`grad_check_report`."""
    report = grad_check_report(fn, tensors, h, max_entries, seed)
    return max(report.values()) if report else 0.0
