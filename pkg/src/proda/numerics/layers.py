"""Parameters, modules and the small set of learnable layers built on autograd."""
from __future__ import annotations

from typing import Iterator

import numpy as np

from . import autograd as ag
from .autograd import Tensor


class Parameter(Tensor):
    """Leaf tensor owned by a module. ``trainable=False`` freezes it."""

    __slots__ = ("name", "trainable")

    def __init__(self, data, trainable: bool = True):
        super().__init__(data, requires_grad=trainable)
        self.name = ""
        self.trainable = trainable

    def set_trainable(self, flag: bool) -> None:
        self.trainable = flag
        self.requires_grad = flag
        if not flag:
            self.grad = None


class Module:
    """Container with deterministic (attribute-order) parameter naming.

    Non-learnable state (running statistics) is registered with
    :meth:`register_buffer` and serialized alongside the parameters.
    """

    def __init__(self):
        self.training = True
        self._buffer_names: list[str] = []

    def register_buffer(self, name: str, value: np.ndarray) -> None:
        setattr(self, name, np.asarray(value, dtype=ag.DTYPE))
        if name not in self._buffer_names:
            self._buffer_names.append(name)

    def children(self) -> Iterator[tuple[str, "Module"]]:
        for key, val in vars(self).items():
            if isinstance(val, Module):
                yield key, val
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield f"{key}.{i}", item

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for key, val in vars(self).items():
            if isinstance(val, Parameter):
                val.name = prefix + key
                yield prefix + key, val
        for key, child in self.children():
            yield from child.named_parameters(f"{prefix}{key}.")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def trainable_parameters(self) -> list[Parameter]:
        return [p for p in self.parameters() if p.trainable]

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for name in self._buffer_names:
            yield prefix + name, getattr(self, name)
        for key, child in self.children():
            yield from child.named_buffers(f"{prefix}{key}.")

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {name: p.data.copy() for name, p in self.named_parameters()}
        for name, buf in self.named_buffers():
            state[name] = buf.copy()
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        for name, p in params.items():
            if name not in state:
                raise KeyError(f"missing parameter '{name}' in state")
            if state[name].shape != p.shape:
                raise ag.ShapeError(f"{name}: checkpoint shape {state[name].shape} != {p.shape}")
            p.data = np.array(state[name], dtype=ag.DTYPE)
        self._load_buffers(state, "")

    def _load_buffers(self, state, prefix):
        for name in self._buffer_names:
            key = prefix + name
            if key not in state:
                raise KeyError(f"missing buffer '{key}' in state")
            setattr(self, name, np.array(state[key], dtype=ag.DTYPE))
        for key, child in self.children():
            child._load_buffers(state, f"{prefix}{key}.")

    def train(self, mode: bool = True) -> "Module":
        self.training = mode
        for _, child in self.children():
            child.train(mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError


def _uniform(rng: np.random.Generator, shape, bound: float) -> np.ndarray:
    return rng.uniform(-bound, bound, size=shape)


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True,
                 zero: bool = False):
        super().__init__()
        self.d_in, self.d_out = d_in, d_out
        bound = 1.0 / np.sqrt(d_in)
        self.weight = Parameter(np.zeros((d_in, d_out)) if zero else _uniform(rng, (d_in, d_out), bound))
        self.bias = Parameter(np.zeros(d_out) if zero else _uniform(rng, (d_out,), bound)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.d_in:
            raise ag.ShapeError(f"Linear({self.d_in}->{self.d_out}): input shape {x.shape}")
        y = ag.matmul(x, self.weight)
        return y + self.bias if self.bias is not None else y


class MLP(Module):
    """Stack of Linear layers with ReLU between them (none after the last)."""

    def __init__(self, sizes: list[int], rng: np.random.Generator, last_bias: bool = True):
        super().__init__()
        n = len(sizes) - 1
        self.layers = [Linear(a, b, rng, bias=last_bias or i < n - 1)
                       for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:]))]

    def forward(self, x: Tensor) -> Tensor:
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = ag.relu(x)
        return x


class Embedding(Module):
    def __init__(self, num: int, dim: int, rng: np.random.Generator, scale: float = 1.0):
        super().__init__()
        self.table = Parameter(rng.normal(0.0, scale, size=(num, dim)))

    def forward(self, ids: np.ndarray) -> Tensor:
        return ag.embedding(self.table, ids)


def scaled_dot_attention(q: Tensor, k: Tensor, v: Tensor, key_mask: np.ndarray | None = None) -> Tensor:
    """softmax(q k^T / sqrt(d)) v over the second-to-last axis.

    ``key_mask`` has the shape of ``q`` without the feature axis; masked keys
    receive -inf logits. A query whose keys are all masked yields zeros.
    """
    d = q.shape[-1]
    logits = ag.matmul(q, ag.swapaxes(k, -1, -2)) * (1.0 / np.sqrt(d))
    mask = None if key_mask is None else key_mask[..., None, :]
    return ag.matmul(ag.softmax(logits, axis=-1, mask=mask), v)


class SelfAttention(Module):
    """Single-head self-attention with a residual connection.

    out = x + attention(x W_q, x W_k, x W_v); positions with ``mask == False``
    are neither attended to nor updated (output zero there). The key
    projection has no bias: it would shift every score of a query equally
    and so cannot change the softmax.
    """

    def __init__(self, dim: int, rng: np.random.Generator, scale: float = 1.0,
                 zero_value: bool = False):
        super().__init__()
        self.q = Linear(dim, dim, rng)
        self.k = Linear(dim, dim, rng, bias=False)
        self.v = Linear(dim, dim, rng, zero=zero_value)
        if scale != 1.0:
            for lin in (self.q, self.k, self.v):
                lin.weight.data *= scale
                if lin.bias is not None:
                    lin.bias.data *= scale

    def forward(self, x: Tensor, mask: np.ndarray | None = None) -> Tensor:
        attn = scaled_dot_attention(self.q(x), self.k(x), self.v(x), mask)
        out = x + attn
        if mask is not None:
            out = out * mask[..., None].astype(ag.DTYPE)
        return out
