"""Parameter bookkeeping shared by all architectures."""

from __future__ import annotations

import contextlib
from typing import Dict, Iterator, List

import numpy as np

from ..autodiff import ModelWeights, Parameter, Tensor, conv, default_dtype
from ..errors import IncompatibleCheckpointError


class Model:
    """Ordered collection of named parameters plus a forward pass."""

    arch = "model"

    def __init__(self, seed: int = 0):
        self.seed = seed
        self._rng = np.random.default_rng(seed)
        self._params: Dict[str, Parameter] = {}

    # construction helpers -------------------------------------------------
    def _add(self, name: str, data: np.ndarray, trainable: bool = True) -> Parameter:
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        p = Parameter(np.asarray(data, dtype=default_dtype()), name, requires_grad=trainable)
        self._params[name] = p
        return p

    def _conv_params(self, name: str, c_in: int, c_out: int, kernel, trainable: bool = True):
        kernel = tuple(kernel)
        fan_in = c_in * int(np.prod(kernel))
        bound = np.sqrt(6.0 / fan_in)
        w = self._rng.uniform(-bound, bound, size=(c_out, c_in) + kernel)
        return self._add(f"{name}.w", w, trainable), self._add(f"{name}.b", np.zeros(c_out), trainable)

    def _linear_params(self, name: str, n_in: int, n_out: int):
        bound = np.sqrt(6.0 / n_in)
        w = self._rng.uniform(-bound, bound, size=(n_out, n_in))
        return self._add(f"{name}.w", w), self._add(f"{name}.b", np.zeros(n_out))

    def _prelu_param(self, name: str, channels: int) -> Parameter:
        return self._add(name, np.full(channels, 0.25))

    def _conv(self, name: str, x: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
        return conv(x, self._params[f"{name}.w"], self._params[f"{name}.b"], stride, padding)

    # public API -------------------------------------------------------------
    def parameters(self) -> List[Parameter]:
        return list(self._params.values())

    def trainable_parameters(self) -> List[Parameter]:
        return [p for p in self._params.values() if p.requires_grad]

    def __getitem__(self, name: str) -> Parameter:
        return self._params[name]

    def named_parameters(self) -> Iterator:
        return iter(self._params.items())

    def config_dict(self) -> dict:
        return {}

    def weights(self) -> ModelWeights:
        return ModelWeights.from_parameters(self.arch, self.config_dict(), self.parameters())

    def load_weights(self, w: ModelWeights) -> "Model":
        if w.arch != self.arch:
            raise IncompatibleCheckpointError(f"weights are for {w.arch!r}, model is {self.arch!r}")
        if list(w.tensors) != list(self._params):
            raise IncompatibleCheckpointError("parameter names differ between weights and model")
        for name, arr in w.tensors.items():
            p = self._params[name]
            if arr.shape != p.shape:
                raise IncompatibleCheckpointError(f"{name}: shape {arr.shape} != {p.shape}")
            p.data = np.array(arr, dtype=p.data.dtype)
        return self

    def forward(self, x: Tensor) -> Tensor:
        raise NotImplementedError

    def __call__(self, x) -> Tensor:
        if not isinstance(x, Tensor):
            x = Tensor(np.asarray(x, dtype=default_dtype()))
        return self.forward(x)


@contextlib.contextmanager
def frozen(model: Model):
    """Treat every parameter of ``model`` as a constant for the duration of the block."""
    params = model.parameters()
    saved = [p.requires_grad for p in params]
    for p in params:
        p.requires_grad = False
    try:
        yield model
    finally:
        for p, flag in zip(params, saved):
            p.requires_grad = flag


def count_params(model: Model) -> int:
    """Number of learnable scalars (frozen parameters excluded)."""
    return int(sum(p.data.size for p in model.trainable_parameters()))


class PointwiseGenerator(Model):
    """A single 1x1x1 convolution; with unit weight it is the identity generator."""

    arch = "pointwise"

    def __init__(self, in_channels: int = 1, out_channels: int = 1, seed: int = 0):
        super().__init__(seed)
        self.in_channels, self.out_channels = in_channels, out_channels
        self._conv_params("out", in_channels, out_channels, (1, 1, 1))

    @classmethod
    def identity(cls) -> "PointwiseGenerator":
        m = cls(1, 1)
        m["out.w"].data = np.ones_like(m["out.w"].data)
        return m

    def config_dict(self) -> dict:
        return {"in_channels": self.in_channels, "out_channels": self.out_channels}

    def forward(self, x: Tensor) -> Tensor:
        return self._conv("out", x)
