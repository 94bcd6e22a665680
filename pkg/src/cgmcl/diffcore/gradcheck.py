"""Central finite-difference oracle for tape gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from cgmcl.diffcore.store import ParamStore
from cgmcl.diffcore.tensor import Tape, Tensor
from cgmcl.errors import ConfigError, ReproducibilityError

LossFn = Callable[[dict[str, Tensor]], Tensor]


@dataclass
class ParamCheck:
    name: str
    max_rel_err: float
    max_abs_err: float
    checked: int
    skipped: int


@dataclass
class GradCheckReport:
    params: list[ParamCheck] = field(default_factory=list)
    tol: float = 1e-4

    @property
    def max_rel_err(self) -> float:
        return max((p.max_rel_err for p in self.params), default=0.0)

    @property
    def passed(self) -> bool:
        return all(p.max_rel_err < self.tol for p in self.params)

    @property
    def skipped(self) -> int:
        return sum(p.skipped for p in self.params)

    def summary(self) -> str:
        lines = [f"{p.name:<28s} rel={p.max_rel_err:.3e} abs={p.max_abs_err:.3e} "
                 f"checked={p.checked} skipped={p.skipped}" for p in self.params]
        status = "PASS" if self.passed else "FAIL"
        lines.append(f"{status}: max relative error {self.max_rel_err:.3e} (tol {self.tol:g})")
        return "\n".join(lines)


def _evaluate(loss_fn: LossFn, store: ParamStore) -> tuple[float, tuple[bytes, ...]]:
    tape = Tape()
    loss = loss_fn(store.watch(tape))
    return loss.item(), tape.kink_signature()


def analytic_gradients(loss_fn: LossFn, store: ParamStore) -> dict[str, np.ndarray]:
    tape = Tape()
    loss = loss_fn(store.watch(tape))
    tape.backward(loss, store)
    return {name: store.grad(name).copy() for name in store}


def finite_difference_check(loss_fn: LossFn, store: ParamStore, h: float = 1e-5,
                            tol: float = 1e-4, names: list[str] | None = None) -> GradCheckReport:
    """Compare tape gradients with central differences, entry by entry.

    The relative error of a parameter is ``max|analytic - numeric|`` divided by
    ``max(max|numeric|, 1e-8)`` over that parameter's entries. Entries whose
    +h and -h evaluations fall on different sides of a non-smooth point
    (leaky-relu or hinge) are skipped and counted.
    """
    if not h > 0:
        raise ConfigError(f"step h must be > 0, got {h}")
    base, base_sig = _evaluate(loss_fn, store)
    again, _ = _evaluate(loss_fn, store)
    if base != again:
        raise ReproducibilityError(f"loss_fn is not deterministic ({base!r} vs {again!r})")

    analytic = analytic_gradients(loss_fn, store)
    report = GradCheckReport(tol=tol)
    for name in names or store.names():
        value = store.value(name)
        flat = value.reshape(-1)
        numeric = np.zeros(flat.size)
        usable = np.ones(flat.size, dtype=bool)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + h
            f_plus, sig_plus = _evaluate(loss_fn, store)
            flat[idx] = orig - h
            f_minus, sig_minus = _evaluate(loss_fn, store)
            flat[idx] = orig
            if sig_plus != sig_minus:
                usable[idx] = False
                continue
            numeric[idx] = (f_plus - f_minus) / (2.0 * h)
        a = analytic[name].reshape(-1)
        if usable.any():
            diff = np.abs(a - numeric)[usable]
            scale = max(float(np.abs(numeric[usable]).max()), 1e-8)
            abs_err = float(diff.max())
            rel = abs_err / scale
        else:
            abs_err = rel = 0.0
        report.params.append(ParamCheck(name, rel, abs_err, int(usable.sum()),
                                        int((~usable).sum())))
    return report
