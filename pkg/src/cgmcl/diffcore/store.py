from __future__ import annotations

from typing import Iterator

import numpy as np

from cgmcl.diffcore.tensor import Tape, Tensor
from cgmcl.errors import ContractError, DimensionError


class ParamStore:
    """Named trainable arrays, each paired with a same-shape gradient buffer."""

    def __init__(self):
        self._values: dict[str, np.ndarray] = {}
        self._grads: dict[str, np.ndarray] = {}

    def add(self, name: str, value) -> np.ndarray:
        if name in self._values:
            raise ContractError(f"parameter {name!r} already exists")
        arr = np.array(value, dtype=np.float64)
        self._values[name] = arr
        self._grads[name] = np.zeros_like(arr)
        return arr

    def __contains__(self, name: str) -> bool:
        return name in self._values

    def __len__(self) -> int:
        return len(self._values)

    def __iter__(self) -> Iterator[str]:
        return iter(self._values)

    def names(self) -> list[str]:
        return list(self._values)

    def value(self, name: str) -> np.ndarray:
        return self._values[name]

    def grad(self, name: str) -> np.ndarray:
        return self._grads[name]

    def set_value(self, name: str, value) -> None:
        arr = np.asarray(value, dtype=np.float64)
        if arr.shape != self._values[name].shape:
            raise DimensionError(f"{name}: shape {arr.shape} != {self._values[name].shape}")
        self._values[name][...] = arr

    def zero_grad(self) -> None:
        for g in self._grads.values():
            g[...] = 0.0

    def watch(self, tape: Tape) -> dict[str, Tensor]:
        """Expose every parameter as a leaf on ``tape``."""
        return {name: tape.leaf(v, name) for name, v in self._values.items()}

    def constants(self) -> dict[str, Tensor]:
        """Untaped views for pure inference."""
        return {name: Tensor(v) for name, v in self._values.items()}

    def copy(self) -> "ParamStore":
        other = ParamStore()
        for name, v in self._values.items():
            other.add(name, v.copy())
            other._grads[name][...] = self._grads[name]
        return other

    def num_values(self) -> int:
        return sum(v.size for v in self._values.values())
