"""Named trainable tensors and their seeded initialization."""

from __future__ import annotations

import math

import numpy as np

from ..errors import ArgumentError, CheckpointError
from .tensor import Tape, Tensor


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> np.ndarray:
    """uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out))."""
    a = math.sqrt(6.0 / (fan_in + fan_out))
    if shape is None:
        shape = (fan_in, fan_out)
    return rng.uniform(-a, a, size=shape)


class ParamSet:
    """Registry of named weight tensors; shapes are fixed once added.

    Binding to a tape marks every parameter as a gradient sink for one
    forward/backward cycle and clears stale grads. Updates are
    single-writer; reads of ``data`` are safe from concurrent forwards.
    """

    def __init__(self) -> None:
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self._params:
            raise ArgumentError(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(value, dtype=np.float64))
        self._params[name] = t
        return t

    def matrix(self, name: str, rng: np.random.Generator, fan_in: int, fan_out: int) -> Tensor:
        return self.add(name, glorot_uniform(rng, fan_in, fan_out))

    def vector(self, name: str, rng: np.random.Generator, width: int) -> Tensor:
        return self.add(name, glorot_uniform(rng, width, width, shape=(width,)))

    def zeros(self, name: str, shape) -> Tensor:
        return self.add(name, np.zeros(shape))

    def ones(self, name: str, shape) -> Tensor:
        return self.add(name, np.ones(shape))

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def n_values(self) -> int:
        return sum(t.data.size for t in self._params.values())

    def bind(self, tape: Tape | None) -> None:
        for t in self._params.values():
            t.tape = tape
            t.grad = None

    def grads(self) -> dict[str, np.ndarray]:
        """Gradients after a backward pass; unreached parameters get zeros."""
        return {
            name: (t.grad if t.grad is not None else np.zeros_like(t.data))
            for name, t in self._params.items()
        }

    def state(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self._params.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        missing = set(self._params) - set(state)
        extra = set(state) - set(self._params)
        if missing or extra:
            raise CheckpointError(f"parameter names mismatch: missing={sorted(missing)} extra={sorted(extra)}")
        for name, t in self._params.items():
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != t.data.shape:
                raise CheckpointError(f"shape mismatch for {name!r}: {arr.shape} != {t.data.shape}")
            t.data = arr.copy()
