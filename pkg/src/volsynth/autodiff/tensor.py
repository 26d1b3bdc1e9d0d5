"""Tensors, parameters and the reverse-mode tape.

Operations record themselves on the innermost active :class:`Tape` whenever at
least one input requires a gradient. Outside a tape nothing is recorded, which
is how inference runs.

    with Tape() as tape:
        loss = reduce(conv(x, w, b), "mean")
    grads = backward(tape, loss, [w, b])
"""

from __future__ import annotations

import contextlib
import threading
from dataclasses import dataclass
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from ..errors import ContractError

_state = threading.local()


def _tape_stack() -> List["Tape"]:
    if not hasattr(_state, "tapes"):
        _state.tapes = []
    return _state.tapes


def _dtype_stack() -> list:
    if not hasattr(_state, "dtypes"):
        _state.dtypes = [np.dtype(np.float32)]
    return _state.dtypes


def default_dtype() -> np.dtype:
    """Real type used for new parameters and constant tensors (float32 unless overridden)."""
    return _dtype_stack()[-1]


@contextlib.contextmanager
def precision(dtype):
    """Temporarily switch the default real type, e.g. ``precision(np.float64)`` for gradient checks."""
    stack = _dtype_stack()
    stack.append(np.dtype(dtype))
    try:
        yield
    finally:
        stack.pop()


class Tensor:
    """An N-d array in (batch, channels, spatial...) layout that can sit on a tape."""

    __slots__ = ("data", "requires_grad", "name", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        arr = np.asarray(data)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(default_dtype())
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.name = name

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single-element tensor, shape is {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{label})"

    # arithmetic sugar; the real work lives in ops
    def __add__(self, other):
        from .ops import add

        return add(self, other)

    def __radd__(self, other):
        from .ops import add

        return add(other, self)

    def __sub__(self, other):
        from .ops import add, scale

        return add(self, scale(other, -1.0))

    def __neg__(self):
        from .ops import scale

        return scale(self, -1.0)

    def __mul__(self, other):
        from .ops import scale

        if isinstance(other, Tensor):
            return NotImplemented
        return scale(self, float(other))

    __rmul__ = __mul__


class Parameter(Tensor):
    """A named learnable tensor. Frozen parameters have ``requires_grad=False``."""

    __slots__ = ()

    def __init__(self, data, name: str, requires_grad: bool = True):
        arr = np.array(data)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(default_dtype())
        super().__init__(arr, requires_grad, name)

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape}, requires_grad={self.requires_grad})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=default_dtype()))


@dataclass
class Node:
    """One recorded operation: inputs, output and the vector-Jacobian product."""

    op: str
    inputs: Tuple[Tensor, ...]
    output: Tensor
    vjp: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]
    needs: Tuple[bool, ...]  # requires_grad of each input when the op ran


class Tape:
    """Ordered record of executed operations; usable as a context manager."""

    def __init__(self):
        self.nodes: List[Node] = []

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc):
        stack = _tape_stack()
        if stack and stack[-1] is self:
            stack.pop()
        return False

    def __len__(self) -> int:
        return len(self.nodes)


def current_tape() -> Optional[Tape]:
    stack = _tape_stack()
    return stack[-1] if stack else None


@contextlib.contextmanager
def no_tape():
    """Suspend recording, e.g. to evaluate a model without building a graph."""
    stack = _tape_stack()
    saved = list(stack)
    stack.clear()
    try:
        yield
    finally:
        stack.extend(saved)


def record(op: str, out_data: np.ndarray, inputs: Sequence[Tensor], vjp) -> Tensor:
    """Wrap ``out_data`` in a tensor and, if any input needs a gradient, record the node."""
    out = Tensor(out_data)
    tape = current_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.nodes.append(Node(op, tuple(inputs), out, vjp, tuple(t.requires_grad for t in inputs)))
    return out


def backward(tape: Tape, loss: Tensor, wrt: Optional[Iterable[Tensor]] = None) -> Dict[Tensor, np.ndarray]:
    """Reverse sweep over ``tape`` from a scalar ``loss``.

    Returns a map from tensor to gradient. With ``wrt`` given, the map holds
    exactly those tensors, with zero gradients for any not on the loss path;
    otherwise it holds every leaf that requires a gradient.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads: Dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaves: Dict[int, Tensor] = {}
    produced = set()
    for node in reversed(tape.nodes):
        produced.add(id(node.output))
        g = grads.pop(id(node.output), None)
        if g is None:
            continue
        in_grads = node.vjp(g)
        for t, gi, need in zip(node.inputs, in_grads, node.needs):
            if gi is None or not need:
                continue
            key = id(t)
            leaves[key] = t
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = gi
    if id(loss) not in produced and loss.requires_grad:
        leaves[id(loss)] = loss

    if wrt is None:
        return {t: grads[k] for k, t in leaves.items() if k in grads and k not in produced}
    out: Dict[Tensor, np.ndarray] = {}
    for t in wrt:
        g = grads.get(id(t))
        out[t] = np.zeros_like(t.data) if g is None else g.astype(t.data.dtype, copy=False)
    return out
