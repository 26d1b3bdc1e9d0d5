"""Convolution kernels (forward, input-gradient, weight-gradient).

Two interchangeable backends compute the same cross-correlation:

* ``numpy``: a reference im2col implementation, always available.
* ``torch``: the same three products delegated to torch's CPU convolution
  routines, used when torch is importable because it is roughly an order of
  magnitude faster for 5x5x5 kernels.

The tape and every gradient rule stay in :mod:`volsynth.autodiff.ops`; a
backend only supplies the three dense products. Select one with the
``VOLSYNTH_CONV_BACKEND`` environment variable (``auto``, ``numpy``, ``torch``)
or :func:`use_backend`.
"""

from __future__ import annotations

import contextlib
import os
from typing import Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

Ints = Tuple[int, ...]


class NumpyConv:
    name = "numpy"

    @staticmethod
    def _windows(x: np.ndarray, kshape: Ints, stride: int, padding: int) -> np.ndarray:
        nd = len(kshape)
        if padding:
            x = np.pad(x, [(0, 0), (0, 0)] + [(padding, padding)] * nd)
        win = sliding_window_view(x, kshape, axis=tuple(range(2, 2 + nd)))
        if stride > 1:
            win = win[(slice(None), slice(None)) + (slice(None, None, stride),) * nd]
        return win

    def forward(self, x, w, stride, padding):
        nd = w.ndim - 2
        win = self._windows(x, w.shape[2:], stride, padding)
        # win: (N, C, *out, *k) ; w: (O, C, *k)
        out = np.tensordot(win, w, axes=([1] + list(range(2 + nd, 2 + 2 * nd)), [1] + list(range(2, 2 + nd))))
        return np.ascontiguousarray(np.moveaxis(out, -1, 1))

    def backward_weight(self, g, x, wshape, stride, padding):
        nd = len(wshape) - 2
        win = self._windows(x, wshape[2:], stride, padding)
        axes = [0] + list(range(2, 2 + nd))
        return np.tensordot(g, win, axes=(axes, axes))

    def backward_input(self, g, w, xshape, stride, padding):
        nd = w.ndim - 2
        n, c = xshape[:2]
        padded = [s + 2 * padding for s in xshape[2:]]
        gx = np.zeros((c, n, *padded), dtype=g.dtype)
        out_sp = g.shape[2:]
        for offset in np.ndindex(*w.shape[2:]):
            contrib = np.tensordot(w[(slice(None), slice(None)) + offset], g, axes=([0], [1]))
            region = tuple(slice(o, o + stride * (m - 1) + 1, stride) for o, m in zip(offset, out_sp))
            gx[(slice(None), slice(None)) + region] += contrib
        gx = np.moveaxis(gx, 0, 1)
        if padding:
            gx = gx[(slice(None), slice(None)) + (slice(padding, -padding),) * nd]
        return np.ascontiguousarray(gx)

    def backward(self, g, x, w, need_x, need_w, stride, padding):
        gx = self.backward_input(g, w, x.shape, stride, padding) if need_x else None
        gw = self.backward_weight(g, x, w.shape, stride, padding) if need_w else None
        return gx, gw


class TorchConv:
    name = "torch"

    def __init__(self):
        import torch
        import torch.nn.functional as F

        self.torch = torch
        self._fwd = {1: F.conv1d, 2: F.conv2d, 3: F.conv3d}
        self._gin = {1: torch.nn.grad.conv1d_input, 2: torch.nn.grad.conv2d_input, 3: torch.nn.grad.conv3d_input}
        self._gw = {1: torch.nn.grad.conv1d_weight, 2: torch.nn.grad.conv2d_weight, 3: torch.nn.grad.conv3d_weight}

    def _t(self, a):
        return self.torch.from_numpy(np.ascontiguousarray(a))

    def forward(self, x, w, stride, padding):
        with self.torch.no_grad():
            return self._fwd[w.ndim - 2](self._t(x), self._t(w), None, stride, padding).numpy()

    def backward_weight(self, g, x, wshape, stride, padding):
        with self.torch.no_grad():
            return self._gw[len(wshape) - 2](self._t(x), tuple(wshape), self._t(g), stride, padding).numpy()

    def backward_input(self, g, w, xshape, stride, padding):
        with self.torch.no_grad():
            return self._gin[w.ndim - 2](tuple(xshape), self._t(w), self._t(g), stride, padding).numpy()

    def backward(self, g, x, w, need_x, need_w, stride, padding):
        """Input and weight gradients from a single native call."""
        nd = w.ndim - 2
        with self.torch.no_grad():
            gx, gw, _ = self.torch.ops.aten.convolution_backward(
                self._t(g), self._t(x), self._t(w), None, [stride] * nd, [padding] * nd, [1] * nd,
                False, [0] * nd, 1, [need_x, need_w, False])
        return (gx.numpy() if need_x else None), (gw.numpy() if need_w else None)


_BACKENDS = {}


def get_backend(name: str = None):
    if name is None:
        name = _active[-1]
    if name == "auto":
        try:
            return get_backend("torch")
        except ImportError:
            return get_backend("numpy")
    if name not in _BACKENDS:
        if name == "numpy":
            _BACKENDS[name] = NumpyConv()
        elif name == "torch":
            _BACKENDS[name] = TorchConv()
        else:
            raise ValueError(f"unknown conv backend {name!r}")
    return _BACKENDS[name]


_active = [os.environ.get("VOLSYNTH_CONV_BACKEND", "auto")]


@contextlib.contextmanager
def use_backend(name: str):
    """Run a block with a specific convolution backend."""
    get_backend(name)
    _active.append(name)
    try:
        yield
    finally:
        _active.pop()


def conv_output_shape(in_shape: Sequence[int], kshape: Sequence[int], stride: int, padding: int) -> Ints:
    return tuple((n + 2 * padding - k) // stride + 1 for n, k in zip(in_shape, kshape))
