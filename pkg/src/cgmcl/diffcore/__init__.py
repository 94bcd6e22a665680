"""Minimal reverse-mode differentiation over dense float64 matrices."""

from cgmcl.diffcore import ops
from cgmcl.diffcore.gradcheck import GradCheckReport, analytic_gradients, finite_difference_check
from cgmcl.diffcore.optim import SGD, Adam
from cgmcl.diffcore.store import ParamStore
from cgmcl.diffcore.tensor import Tape, Tensor

__all__ = [
    "Adam",
    "GradCheckReport",
    "ParamStore",
    "SGD",
    "Tape",
    "Tensor",
    "analytic_gradients",
    "finite_difference_check",
    "ops",
]
