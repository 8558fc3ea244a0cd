"""Named parameter storage, seeded initialisation and the Adam update."""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor

__all__ = ["ParamStore", "MissingGradError", "adam_step", "glorot", "param_rng", "scope"]


class MissingGradError(RuntimeError):
    pass


def param_rng(seed: int, name: str) -> np.random.Generator:
    """Generator keyed on (seed, name) so init does not depend on creation order."""
    return np.random.default_rng([int(seed), zlib.crc32(name.encode("utf-8"))])


def glorot(shape: tuple[int, int], rng: np.random.Generator) -> np.ndarray:
    fan_in, fan_out = shape[-2], shape[-1]
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=shape)


def scope(params, prefix: str) -> dict[str, Tensor]:
    """Entries of ``params`` under ``prefix.`` with the prefix stripped."""
    head = prefix + "."
    return {k[len(head):]: p for k, p in params.items() if k.startswith(head)}


@dataclass
class ParamStore:
    """Learnable tensors by name, plus Adam moments and the shared step count."""

    seed: int = 0
    entries: dict[str, Tensor] = field(default_factory=dict)
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self.entries:
            raise KeyError(f"parameter {name!r} already registered")
        p = Tensor(np.array(value, dtype=np.float64), requires_grad=True)
        self.entries[name] = p
        self.m[name] = np.zeros_like(p.data)
        self.v[name] = np.zeros_like(p.data)
        return p

    def weight(self, name: str, shape: tuple[int, int]) -> Tensor:
        return self.add(name, glorot(shape, param_rng(self.seed, name)))

    def zeros(self, name: str, shape) -> Tensor:
        return self.add(name, np.zeros(shape))

    def full(self, name: str, shape, value: float) -> Tensor:
        return self.add(name, np.full(shape, float(value)))

    def __getitem__(self, name: str) -> Tensor:
        return self.entries[name]

    def __contains__(self, name: str) -> bool:
        return name in self.entries

    def __iter__(self):
        return iter(self.entries)

    def __len__(self) -> int:
        return len(self.entries)

    def items(self):
        return self.entries.items()

    def scope(self, prefix: str) -> dict[str, Tensor]:
        return scope(self.entries, prefix)

    def zero_grad(self) -> None:
        for p in self.entries.values():
            p.grad = None

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.entries.items()}

    def load(self, values: dict[str, np.ndarray]) -> None:
        missing = set(self.entries) - set(values)
        extra = set(values) - set(self.entries)
        if missing or extra:
            raise KeyError(f"parameter mismatch: missing={sorted(missing)} unexpected={sorted(extra)}")
        for k, p in self.entries.items():
            arr = np.asarray(values[k], dtype=np.float64)
            if arr.shape != p.shape:
                raise ValueError(f"parameter {k!r}: shape {arr.shape} != expected {p.shape}")
            p.data[...] = arr

    def num_values(self) -> int:
        return sum(p.size for p in self.entries.values())


def adam_step(
    store: ParamStore,
    lr: float = 1e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """One bias-corrected Adam update of every parameter; clears grads after."""
    for name, p in store.entries.items():
        if p.grad is None:
            raise MissingGradError(f"adam_step: no gradient for parameter {name!r}")
    store.t += 1
    bc1 = 1.0 - beta1**store.t
    bc2 = 1.0 - beta2**store.t
    for name, p in store.entries.items():
        g = p.grad
        m = store.m[name]
        v = store.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
        p.grad = None
