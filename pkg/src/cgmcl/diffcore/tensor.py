"""Dense float64 tensors recorded on an explicit tape for reverse-mode gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from cgmcl.errors import ContractError, DimensionError, NumericalError


class Tensor:
    """A float64 array plus the tape (if any) that produced it.

    Tensors without a tape are constants: gradients never flow into them.
    """

    __slots__ = ("data", "tape", "name", "requires_grad")

    def __init__(self, data, tape: "Tape | None" = None, name: str | None = None,
                 requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.tape = tape
        self.name = name
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def T(self) -> "Tensor":
        from cgmcl.diffcore import ops
        return ops.transpose(self)

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    # operator sugar; all of these route through the primitive set in ops
    def __add__(self, other):
        from cgmcl.diffcore import ops
        return ops.add(self, other)

    def __radd__(self, other):
        from cgmcl.diffcore import ops
        return ops.add(other, self)

    def __sub__(self, other):
        from cgmcl.diffcore import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from cgmcl.diffcore import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from cgmcl.diffcore import ops
        if isinstance(other, (int, float)):
            return ops.scale(self, float(other))
        return ops.mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        from cgmcl.diffcore import ops
        return ops.scale(self, -1.0)

    def __matmul__(self, other):
        from cgmcl.diffcore import ops
        return ops.matmul(self, other)


BackwardRule = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


@dataclass
class Record:
    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    rule: BackwardRule
    # sign pattern of inputs to non-smooth primitives, relative to their kink
    kink: np.ndarray | None = None


@dataclass
class Tape:
    """Ordered log of primitive applications.

    A tape supports exactly one backward pass; a second call raises
    ``ContractError`` because intermediate gradients are not retained.
    """

    records: list[Record] = field(default_factory=list)
    leaves: dict[str, Tensor] = field(default_factory=dict)
    consumed: bool = False

    def leaf(self, value, name: str) -> Tensor:
        if name in self.leaves:
            raise ContractError(f"duplicate leaf name {name!r}")
        t = Tensor(value, tape=self, name=name, requires_grad=True)
        self.leaves[name] = t
        return t

    def record(self, op: str, inputs: tuple[Tensor, ...], out: np.ndarray,
               rule: BackwardRule, kink: np.ndarray | None = None) -> Tensor:
        if self.consumed:
            raise ContractError("tape already consumed by backward(); re-run the forward pass")
        if not np.all(np.isfinite(out)):
            raise NumericalError(f"non-finite value produced by {op}")
        needs = any(t.requires_grad for t in inputs)
        result = Tensor(out, tape=self, requires_grad=needs)
        if needs or kink is not None:
            self.records.append(Record(op, inputs, result, rule, kink))
        return result

    def kink_signature(self) -> tuple[bytes, ...]:
        return tuple(r.kink.tobytes() for r in self.records if r.kink is not None)

    def backward(self, loss: Tensor, store=None) -> dict[str, np.ndarray]:
        """Accumulate d(loss)/d(leaf) for every leaf on this tape.

        When ``store`` is given, its gradients are overwritten: parameters not
        reached from ``loss`` end up with zero gradient.
        """
        if self.consumed:
            raise ContractError("backward() called twice on the same tape")
        if loss.data.size != 1:
            raise ContractError(f"loss must be scalar, got shape {loss.shape}")
        if loss.tape is not self:
            raise ContractError("loss was not recorded on this tape")
        self.consumed = True

        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for rec in reversed(self.records):
            g = grads.pop(id(rec.output), None)
            if g is None:
                continue
            for inp, gi in zip(rec.inputs, rec.rule(g)):
                if gi is None or not inp.requires_grad:
                    continue
                if gi.shape != inp.shape:
                    raise DimensionError(
                        f"{rec.op}: gradient shape {gi.shape} != input shape {inp.shape}")
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi

        out = {name: grads.get(id(t), np.zeros_like(t.data)) for name, t in self.leaves.items()}
        if store is not None:
            store.zero_grad()
            for name, g in out.items():
                if name in store:
                    store.grad(name)[...] = g
        return out
