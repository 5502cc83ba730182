"""Parameter containers and the layers the models are built from.

A Module owns named parameter tensors and child modules; names join with
dots, so a whole model flattens to an ordered {name: Tensor} mapping that
the optimizer and the checkpoint format share.
"""

from __future__ import annotations

import math

import numpy as np

from ..seeds import Stream
from . import ops
from .tensor import ShapeError, Tensor


def he_uniform(stream: Stream, shape: tuple, fan_in: int) -> np.ndarray:
    limit = math.sqrt(6.0 / fan_in)
    return stream.uniform_array(shape, -limit, limit).astype(np.float32)


class Module:
    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._children: dict[str, Module] = {}

    def add_param(self, name: str, tensor: Tensor) -> Tensor:
        tensor.requires_grad = True
        self._params[name] = tensor
        return tensor

    def add_module(self, name: str, module: "Module") -> "Module":
        self._children[name] = module
        return module

    def named_parameters(self, prefix: str = "") -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for name, p in self._params.items():
            out[prefix + name] = p
        for name, child in self._children.items():
            out.update(child.named_parameters(prefix + name + "."))
        return out

    def zero_grad(self) -> None:
        for p in self.named_parameters().values():
            p.grad = np.zeros_like(p.data)

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters().items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        params = self.named_parameters()
        missing = sorted(set(params) - set(state))
        unexpected = sorted(set(state) - set(params))
        if missing or unexpected:
            raise ShapeError(f"state mismatch: missing {missing}, unexpected {unexpected}")
        bad = [f"{name}: checkpoint {state[name].shape} vs model {params[name].shape}"
               for name in params if tuple(state[name].shape) != params[name].shape]
        if bad:
            raise ShapeError("checkpoint tensor shapes do not match the model: " + "; ".join(bad))
        for name, p in params.items():
            p.data = state[name].astype(p.data.dtype, copy=True)


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, stream: Stream, zero_init: bool = False):
        super().__init__()
        if zero_init:
            w = np.zeros((d_in, d_out), dtype=np.float32)
        else:
            w = he_uniform(stream, (d_in, d_out), fan_in=d_in)
        self.w = self.add_param("w", Tensor(w))
        self.b = self.add_param("b", Tensor(np.zeros(d_out, dtype=np.float32)))

    def __call__(self, x: Tensor) -> Tensor:
        return ops.linear(x, self.w, self.b)


class Conv2d(Module):
    def __init__(self, c_in: int, c_out: int, k: int, stream: Stream,
                 stride: int = 1, padding: int = 0, zero_init: bool = False):
        super().__init__()
        self.stride = stride
        self.padding = padding
        if zero_init:
            w = np.zeros((c_out, c_in, k, k), dtype=np.float32)
        else:
            w = he_uniform(stream, (c_out, c_in, k, k), fan_in=c_in * k * k)
        self.w = self.add_param("w", Tensor(w))
        self.b = self.add_param("b", Tensor(np.zeros(c_out, dtype=np.float32)))

    def __call__(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.w, self.b, stride=self.stride, padding=self.padding)


class GroupNorm(Module):
    def __init__(self, channels: int, groups: int = 8):
        super().__init__()
        self.groups = groups
        self.gamma = self.add_param("gamma", Tensor(np.ones(channels, dtype=np.float32)))
        self.beta = self.add_param("beta", Tensor(np.zeros(channels, dtype=np.float32)))

    def __call__(self, x: Tensor) -> Tensor:
        return ops.group_norm(x, self.gamma, self.beta, self.groups)
