from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from cgmcl.diffcore.store import ParamStore
from cgmcl.errors import ConfigError


@dataclass
class SGD:
    lr: float = 0.01

    def __post_init__(self):
        if not self.lr > 0:
            raise ConfigError(f"learning rate must be > 0, got {self.lr}")

    def step(self, store: ParamStore) -> None:
        for name in store:
            store.value(name)[...] -= self.lr * store.grad(name)


@dataclass
class Adam:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    _m: dict[str, np.ndarray] = field(default_factory=dict, repr=False)
    _v: dict[str, np.ndarray] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if not self.lr > 0:
            raise ConfigError(f"learning rate must be > 0, got {self.lr}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("Adam betas must lie in [0, 1)")

    def step(self, store: ParamStore) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for name in store:
            g = store.grad(name)
            m = self._m.setdefault(name, np.zeros_like(g))
            v = self._v.setdefault(name, np.zeros_like(g))
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            store.value(name)[...] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
