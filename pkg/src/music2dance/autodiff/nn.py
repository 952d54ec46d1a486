"""Parameter containers and layers built on the autodiff ``Tensor``."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tensor


def parameter(data, dtype=np.float32) -> Tensor:
    return Tensor(np.asarray(data, dtype=dtype), requires_grad=True)


class Module:
    """Base class: discovers parameters and sub-modules from instance attributes."""

    training = True

    def named_parameters(self, prefix: str = ""):
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(full + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def modules(self):
        yield self
        for value in vars(self).values():
            if isinstance(value, Module):
                yield from value.modules()
            elif isinstance(value, (list, tuple)):
                for item in value:
                    if isinstance(item, Module):
                        yield from item.modules()

    def train(self, mode: bool = True):
        for m in self.modules():
            m.training = mode
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def astype(self, dtype):
        """Cast every parameter in place (float64 for gradient checks)."""
        for p in self.parameters():
            p.data = p.data.astype(dtype)
            p.grad = None
        return self

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = set(own) - set(state)
        unexpected = set(state) - set(own)
        if missing or unexpected:
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(unexpected)}")
        for name, p in own.items():
            value = np.asarray(state[name])
            if value.shape != p.shape:
                raise ValueError(f"{name}: shape {value.shape} != {p.shape}")
            p.data = value.astype(p.dtype)

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class Linear(Module):
    def __init__(self, fan_in: int, fan_out: int, rng: np.random.Generator, bias: bool = True):
        bound = 1.0 / np.sqrt(fan_in)
        self.weight = parameter(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        self.bias = parameter(rng.uniform(-bound, bound, size=fan_out)) if bias else None

    def forward(self, x):
        return T.linear(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        self.gain = parameter(np.ones(dim))
        self.bias = parameter(np.zeros(dim))
        self.eps = eps

    def forward(self, x):
        return T.layer_norm(x, self.gain, self.bias, self.eps)


class Embedding(Module):
    def __init__(self, vocab: int, dim: int, rng: np.random.Generator):
        self.table = parameter(rng.normal(0.0, 0.02, size=(vocab, dim)))

    @property
    def vocab(self) -> int:
        return self.table.shape[0]

    def forward(self, indices):
        return T.embedding_lookup(self.table, indices)


class Dropout(Module):
    def __init__(self, p: float, rng: np.random.Generator):
        self.p = p
        self.rng = rng

    def forward(self, x):
        return T.dropout(x, self.p, self.training, self.rng)


class FeedForward(Module):
    """Position-wise two-layer MLP with ReLU."""

    def __init__(self, dim: int, hidden: int, dropout: float, rng: np.random.Generator):
        self.up = Linear(dim, hidden, rng)
        self.down = Linear(hidden, dim, rng)
        self.drop = Dropout(dropout, rng)

    def forward(self, x):
        return self.down(self.drop(T.relu(self.up(x))))
