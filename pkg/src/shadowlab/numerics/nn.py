"""Small neural-network layer library on top of the tensor tape."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, ShapeError, conv2d, group_norm, matmul, silu

__all__ = [
    "Module", "Conv2d", "Linear", "GroupNorm", "timestep_embedding",
]


class Module:
    """Base class with ordered parameter registration.

    Assigning a Tensor or Module attribute registers it; ``named_parameters``
    walks the tree in insertion order so parameter naming is deterministic.
    """

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_children", {})

    def __setattr__(self, name, value):
        if isinstance(value, Tensor):
            self._params[name] = value
        elif isinstance(value, Module):
            self._children[name] = value
        elif isinstance(value, (list, tuple)) and value and all(isinstance(v, Module) for v in value):
            self._children[name] = list(value)
        object.__setattr__(self, name, value)

    def named_parameters(self, prefix: str = "") -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for name, p in self._params.items():
            out[prefix + name] = p
        for name, child in self._children.items():
            if isinstance(child, list):
                for i, sub in enumerate(child):
                    out.update(sub.named_parameters(f"{prefix}{name}.{i}."))
            else:
                out.update(child.named_parameters(prefix + name + "."))
        return out

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())

    def load_state(self, state: dict[str, np.ndarray], prefix: str = ""):
        """Copy arrays into parameters by name; missing or mismatched names raise."""
        params = self.named_parameters(prefix)
        missing = sorted(set(params) - set(state))
        extra = sorted(set(state) - set(params))
        if missing or extra:
            raise KeyError(f"state mismatch: missing={missing}, unexpected={extra}")
        for name, p in params.items():
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != p.data.shape:
                raise ShapeError(f"parameter '{name}': checkpoint shape {arr.shape} != model shape {p.data.shape}")
            p.data = np.ascontiguousarray(arr)

    def state(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters().items()}


class Conv2d(Module):
    """3x3/1x1 style convolution layer with He-normal or zero initialization."""

    def __init__(self, cin: int, cout: int, k: int, rng: np.random.Generator | None = None,
                 stride: int = 1, padding: int | None = None, bias: bool = True,
                 zero_init: bool = False):
        super().__init__()
        if padding is None:
            padding = k // 2
        self.stride = stride
        self.padding = padding
        if zero_init:
            w = np.zeros((cout, cin, k, k))
        else:
            if rng is None:
                raise ValueError("Conv2d needs an rng unless zero_init=True")
            std = np.sqrt(2.0 / (cin * k * k))
            w = rng.normal(0.0, std, size=(cout, cin, k, k))
        self.weight = Tensor(w, requires_grad=True)
        self.bias = Tensor(np.zeros(cout), requires_grad=True) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


class Linear(Module):
    def __init__(self, din: int, dout: int, rng: np.random.Generator | None = None,
                 zero_init: bool = False):
        super().__init__()
        if zero_init:
            w = np.zeros((din, dout))
        else:
            if rng is None:
                raise ValueError("Linear needs an rng unless zero_init=True")
            w = rng.normal(0.0, np.sqrt(2.0 / din), size=(din, dout))
        self.weight = Tensor(w, requires_grad=True)
        self.bias = Tensor(np.zeros(dout), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        if x.ndim != 2:
            raise ShapeError(f"Linear expects (N, D) input, got {x.shape}")
        return matmul(x, self.weight) + self.bias


class GroupNorm(Module):
    def __init__(self, channels: int, groups: int = 8, eps: float = 1e-5):
        super().__init__()
        if channels % groups != 0:
            raise ShapeError(f"GroupNorm: {channels} channels not divisible by {groups} groups")
        self.groups = groups
        self.eps = eps
        self.gamma = Tensor(np.ones(channels), requires_grad=True)
        self.beta = Tensor(np.zeros(channels), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return group_norm(x, self.gamma, self.beta, self.groups, self.eps)


def timestep_embedding(t: int, dim: int) -> np.ndarray:
    """Sinusoidal features for an integer timestep, shape (dim,).

    Half the features are cosines and half sines over log-spaced frequencies,
    the standard transformer-style position encoding.
    """
    if dim % 2 != 0:
        raise ValueError(f"embedding dim must be even, got {dim}")
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / half)
    args = float(t) * freqs
    return np.concatenate([np.cos(args), np.sin(args)])
