"""Differentiable operators needed by the V-Net family, the critic and WATNet."""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from ..errors import ShapeError
from . import kernels
from .tensor import Tensor, as_tensor, record


def _spatial_axes(x: np.ndarray):
    return tuple(range(2, x.ndim))


def conv(x: Tensor, w: Tensor, b: Optional[Tensor] = None, stride: int = 1, padding: int = 0,
         dims: Optional[int] = None) -> Tensor:
    """N-d cross-correlation with zero padding; ``w`` is (C_out, C_in, *kernel)."""
    if dims is None:
        dims = x.ndim - 2
    if dims not in (1, 2, 3) or x.ndim != dims + 2 or w.ndim != dims + 2:
        raise ShapeError(f"conv{dims}d needs rank-{dims + 2} input and weight, got {x.shape} and {w.shape}")
    if x.shape[1] != w.shape[1]:
        raise ShapeError(f"input has {x.shape[1]} channels but kernel expects {w.shape[1]}")
    if b is not None and b.shape != (w.shape[0],):
        raise ShapeError(f"bias shape {b.shape} does not match {w.shape[0]} output channels")
    if stride < 1:
        raise ShapeError(f"stride must be >= 1, got {stride}")
    out_sp = kernels.conv_output_shape(x.shape[2:], w.shape[2:], stride, padding)
    if min(out_sp) < 1:
        raise ShapeError(f"conv output would be empty for input {x.shape[2:]}, kernel {w.shape[2:]}")

    backend = kernels.get_backend()
    xd, wd = x.data, w.data
    out = backend.forward(xd, wd, stride, padding)
    if b is not None:
        out = out + b.data.reshape((1, -1) + (1,) * dims)

    # flags are read now: a model frozen for this call stays frozen in the backward sweep
    need_x, need_w, need_b = x.requires_grad, w.requires_grad, b is not None and b.requires_grad

    def vjp(g):
        gx, gw = backend.backward(g, xd, wd, need_x, need_w, stride, padding)
        if b is None:
            return gx, gw
        gb = g.sum(axis=(0,) + _spatial_axes(g)) if need_b else None
        return gx, gw, gb

    inputs = (x, w) if b is None else (x, w, b)
    return record("conv", out, inputs, vjp)


def activation(x: Tensor, kind: str = "relu", slope: Optional[Tensor] = None, alpha: float = 0.01) -> Tensor:
    """Elementwise ReLU, leaky ReLU (fixed ``alpha``) or PReLU (per-channel ``slope``).

    At exactly zero the derivative is the negative-side slope.
    """
    xd = x.data
    pos = xd > 0
    if kind == "relu":
        out = np.where(pos, xd, 0).astype(xd.dtype)

        def vjp(g):
            return (np.where(pos, g, 0).astype(g.dtype),)

        return record("relu", out, (x,), vjp)
    if kind == "leaky_relu":
        out = np.where(pos, xd, alpha * xd).astype(xd.dtype)

        def vjp(g):
            return (np.where(pos, g, alpha * g).astype(g.dtype),)

        return record("leaky_relu", out, (x,), vjp)
    if kind == "prelu":
        if slope is None or slope.shape != (xd.shape[1],):
            raise ShapeError(f"prelu needs one slope per channel ({xd.shape[1]}), got {None if slope is None else slope.shape}")
        a = slope.data.reshape((1, -1) + (1,) * (xd.ndim - 2))
        out = np.where(pos, xd, a * xd)
        need_x, need_a = x.requires_grad, slope.requires_grad

        def vjp(g):
            gx = np.where(pos, g, a * g) if need_x else None
            ga = None
            if need_a:
                ga = np.where(pos, 0, g * xd).sum(axis=(0,) + _spatial_axes(xd)).astype(slope.dtype)
            return gx, ga

        return record("prelu", out, (x, slope), vjp)
    raise ValueError(f"unknown activation {kind!r}")


def upsample_nn(x: Tensor, factor: int = 2) -> Tensor:
    """Nearest-neighbour upsampling: replicate each voxel ``factor`` times per spatial axis."""
    factor = int(factor)
    if factor < 1:
        raise ValueError(f"upsampling factor must be >= 1, got {factor}")
    if factor == 1:
        return x
    xd = x.data
    nd = xd.ndim - 2
    expanded_shape = list(xd.shape[:2])
    index = [slice(None), slice(None)]
    for n in xd.shape[2:]:
        expanded_shape += [n, factor]
        index += [slice(None), None]
    out = np.broadcast_to(xd[tuple(index)], expanded_shape).reshape(
        xd.shape[:2] + tuple(n * factor for n in xd.shape[2:])
    )

    def vjp(g):
        blocks = g.reshape(expanded_shape)
        return (blocks.sum(axis=tuple(3 + 2 * i for i in range(nd))),)

    return record("upsample_nn", np.ascontiguousarray(out), (x,), vjp)


def combine(xs: Sequence[Tensor], mode: str = "add") -> Tensor:
    """Elementwise sum (``add``) or channel concatenation (``concat_channels``)."""
    xs = [as_tensor(t) for t in xs]
    if not xs:
        raise ShapeError("combine needs at least one tensor")
    if mode == "add":
        shape = xs[0].shape
        for t in xs[1:]:
            if t.shape != shape:
                raise ShapeError(f"add needs identical shapes, got {shape} and {t.shape}")
        out = xs[0].data
        for t in xs[1:]:
            out = out + t.data

        def vjp(g):
            return tuple(g for _ in xs)

        return record("add", out, xs, vjp)
    if mode == "concat_channels":
        ref = xs[0].shape
        for t in xs[1:]:
            if t.ndim != len(ref) or t.shape[0] != ref[0] or t.shape[2:] != ref[2:]:
                raise ShapeError(f"concat needs equal non-channel dims, got {ref} and {t.shape}")
        out = np.concatenate([t.data for t in xs], axis=1)
        splits = np.cumsum([t.shape[1] for t in xs])[:-1]

        def vjp(g):
            return tuple(np.split(g, splits, axis=1))

        return record("concat", out, xs, vjp)
    raise ValueError(f"unknown combine mode {mode!r}")


def add(a, b) -> Tensor:
    """Sum of two same-shape tensors, or of a tensor and a python scalar."""
    if not isinstance(a, Tensor) or not isinstance(b, Tensor):
        t, c = (a, b) if isinstance(a, Tensor) else (b, a)
        c = float(c)
        return record("add_const", t.data + t.data.dtype.type(c), (t,), lambda g: (g,))
    return combine([a, b], "add")


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)
    xd = x.data
    return record("scale", xd * xd.dtype.type(c), (x,), lambda g: (g * g.dtype.type(c),))


def global_sum_pool(x: Tensor) -> Tensor:
    """Sum over all spatial positions per (batch, channel); output is (N, C)."""
    if x.ndim < 3:
        raise ShapeError(f"global_sum_pool needs rank >= 3, got {x.shape}")
    xd = x.data
    axes = _spatial_axes(xd)
    out = xd.sum(axis=axes)

    def vjp(g):
        return (np.broadcast_to(g.reshape(g.shape + (1,) * len(axes)), xd.shape).copy(),)

    return record("global_sum_pool", out, (x,), vjp)


def linear(x: Tensor, w: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """Affine map per batch row: ``x @ w.T + b`` with ``w`` of shape (out, in)."""
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[1]:
        raise ShapeError(f"linear needs x (N, in) and w (out, in), got {x.shape} and {w.shape}")
    if b is not None and b.shape != (w.shape[0],):
        raise ShapeError(f"bias shape {b.shape} does not match {w.shape[0]} outputs")
    xd, wd = x.data, w.data
    out = xd @ wd.T
    if b is not None:
        out = out + b.data

    need_x, need_w, need_b = x.requires_grad, w.requires_grad, b is not None and b.requires_grad

    def vjp(g):
        gx = g @ wd if need_x else None
        gw = g.T @ xd if need_w else None
        if b is None:
            return gx, gw
        return gx, gw, (g.sum(axis=0) if need_b else None)

    inputs = (x, w) if b is None else (x, w, b)
    return record("linear", out, inputs, vjp)


def reduce(x: Tensor, mode: str = "mean", y=None) -> Tensor:
    """Reduce to a scalar: ``sum``, ``mean`` or ``mean_abs_diff`` against ``y``.

    The derivative of ``|d|`` at ``d == 0`` is taken as 0.
    """
    xd = x.data
    n = xd.size
    if mode == "sum":
        return record("sum", np.asarray(xd.sum()), (x,), lambda g: (np.broadcast_to(g, xd.shape).copy(),))
    if mode == "mean":
        inv = xd.dtype.type(1.0 / n)
        return record("mean", np.asarray(xd.mean()), (x,), lambda g: (np.full_like(xd, g * inv),))
    if mode == "mean_abs_diff":
        if y is None:
            raise ValueError("mean_abs_diff needs a second operand")
        y = as_tensor(y)
        if y.shape != x.shape:
            raise ShapeError(f"mean_abs_diff operands differ in shape: {x.shape} vs {y.shape}")
        d = xd - y.data
        out = np.asarray(np.abs(d).mean())
        sign = np.sign(d)
        need_x, need_y = x.requires_grad, y.requires_grad

        def vjp(g):
            gd = sign * (g / n)
            return (gd if need_x else None), (-gd if need_y else None)

        return record("mean_abs_diff", out, (x, y), vjp)
    raise ValueError(f"unknown reduce mode {mode!r}")
