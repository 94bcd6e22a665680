"""Small deterministic fixtures used by the gradient suite and the loss checks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from cgmcl.data import Cohort, SyntheticSpec, generate_synthetic, split_cohort, standardize
from cgmcl.diffcore import ParamStore, finite_difference_check
from cgmcl.diffcore.gradcheck import GradCheckReport
from cgmcl.graphs import ModalGraph, SelfLoopGraph, with_self_loops
from cgmcl.model import CGMCLModel, Graphs
from cgmcl.trainkit.config import TrainConfig


def gradcheck_cohort() -> Cohort:
    """8 patients, 2 classes, 6 train / 2 test."""
    raw = generate_synthetic(SyntheticSpec(n=8, num_classes=2, D=5, F=4, separation=2.0,
                                           correlation=0.5, noise=1.0, seed=7))
    return standardize(split_cohort(raw, 0.75, seed=3))


def gradcheck_config(backbone: str = "gat", **overrides) -> TrainConfig:
    base = dict(k_image=2, k_clinical=2, d_image=3, d_h=4, d_c=3,
                backbone_image=backbone, backbone_clinical=backbone,
                beta=0.65, delta=0.5, seed=11)
    base.update(overrides)
    return TrainConfig(**base).validate()


@dataclass
class GradCase:
    name: str
    model: CGMCLModel
    store: ParamStore
    cohort: Cohort
    graphs: Graphs

    def loss_fn(self, params):
        return self.model.forward(params, self.cohort, self.graphs).loss


def gradcheck_case(backbone: str = "gat", **overrides) -> GradCase:
    cohort = gradcheck_cohort()
    cfg = gradcheck_config(backbone, **overrides)
    model = CGMCLModel.for_cohort(cfg, cohort)
    store = model.init_params()
    graphs = model.build_graphs(store, cohort)
    return GradCase(f"{backbone}+{backbone}", model, store, cohort, graphs)


def run_gradient_suite(h: float = 1e-5, tol: float = 1e-4) -> dict[str, GradCheckReport]:
    reports = {}
    for backbone in ("gat", "gcn"):
        case = gradcheck_case(backbone)
        reports[case.name] = finite_difference_check(case.loss_fn, case.store, h=h, tol=tol)
    return reports


# -- 4-node loss fixture -----------------------------------------------------------

@dataclass(frozen=True)
class LossFixture:
    S: np.ndarray
    a_hat_I: SelfLoopGraph
    a_hat_C: SelfLoopGraph
    labels: np.ndarray  # one-hot, N x 2
    delta: float
    beta: float
    epsilon: float


def loss_fixture() -> LossFixture:
    """Hand-set similarities over two 4-node graphs.

    Image edges: 0-1, 2-3. Clinical edges: 0-1, 1-2. Classes: {0, 1} and {2, 3}.
    """
    S = np.array([
        [1.30, 0.90, 0.20, 0.75],
        [0.90, 1.10, 0.65, 0.10],
        [0.20, 0.65, 1.40, 1.00],
        [0.75, 0.10, 1.00, 0.95],
    ])
    AI = np.zeros((4, 4), dtype=np.int8)
    AC = np.zeros((4, 4), dtype=np.int8)
    for i, j in ((0, 1), (2, 3)):
        AI[i, j] = AI[j, i] = 1
    for i, j in ((0, 1), (1, 2)):
        AC[i, j] = AC[j, i] = 1
    labels = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 1.0]])
    return LossFixture(S=S, a_hat_I=with_self_loops(ModalGraph(AI, 1)),
                       a_hat_C=with_self_loops(ModalGraph(AC, 1)),
                       labels=labels, delta=0.5, beta=0.65, epsilon=1e-8)
