"""Graph-masked contrastive loss, dual cross-entropy heads, diagonal regularizer."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, fields

import numpy as np

from cgmcl.diffcore import Tensor, ops
from cgmcl.encoders import Affine
from cgmcl.errors import ConfigError, DataError, DimensionError
from cgmcl.graphs import SelfLoopGraph, union_graph

EPSILON = 1e-8
LOSS_MODES = ("ce_only", "ce_plus_contrastive", "full")
POSITIVE_RULES = ("same_class", "first_column")


@dataclass(frozen=True)
class ContrastiveMasks:
    d_pos: np.ndarray
    d_neg: np.ndarray


@dataclass
class LossReport:
    l_image: float
    l_clinical: float
    l_pos: float
    l_neg: float
    l_contrastive: float
    l_diag: float
    l_total: float
    beta: float
    delta: float

    def terms(self) -> dict[str, float]:
        return {f.name: getattr(self, f.name) for f in fields(self)
                if f.name.startswith("l_")}


def threshold(a: np.ndarray) -> np.ndarray:
    """Strict step: 1 where a > 0."""
    return (np.asarray(a) > 0).astype(np.int8)


def build_masks(a_hat_I: SelfLoopGraph, a_hat_C: SelfLoopGraph) -> ContrastiveMasks:
    if a_hat_I.n != a_hat_C.n:
        raise DimensionError(f"graph sizes differ: {a_hat_I.n} vs {a_hat_C.n}")
    AI = a_hat_I.adjacency_hat.astype(np.int64)
    AC = a_hat_C.adjacency_hat.astype(np.int64)
    d_pos = threshold(AI + AC)
    d_neg = threshold((1 - AI) + (1 - AC))
    np.fill_diagonal(d_neg, 0)
    return ContrastiveMasks(d_pos=d_pos, d_neg=d_neg)


def check_one_hot(labels: np.ndarray) -> np.ndarray:
    Y = np.asarray(labels, dtype=np.float64)
    if Y.ndim != 2:
        raise DataError(f"labels must be an N x classes one-hot matrix, got shape {Y.shape}")
    ok = np.isin(Y, (0.0, 1.0)).all(axis=1) & (Y.sum(axis=1) == 1)
    if not ok.all():
        raise DataError(f"label rows {np.flatnonzero(~ok).tolist()} are not one-hot")
    return Y


def one_hot(class_ids, num_classes: int) -> np.ndarray:
    ids = np.asarray(class_ids, dtype=int)
    Y = np.zeros((ids.size, num_classes))
    Y[np.arange(ids.size), ids] = 1.0
    return Y


def positive_indicator(labels: np.ndarray, rule: str = "same_class") -> np.ndarray:
    """pos[i, j] = 1 when j counts as a positive for anchor i."""
    Y = check_one_hot(labels)
    if rule == "same_class":
        return Y @ Y.T
    if rule == "first_column":
        return np.broadcast_to(Y[:, 0][None, :], (Y.shape[0], Y.shape[0])).copy()
    raise ConfigError(f"unknown positive rule {rule!r}; expected one of {POSITIVE_RULES}")


def _train_vector(n: int, train_mask) -> np.ndarray:
    if train_mask is None:
        return np.ones(n)
    t = np.asarray(train_mask, dtype=np.float64).reshape(-1)
    if t.size != n:
        raise DimensionError(f"train mask has {t.size} entries for {n} nodes")
    return t


def contrastive_scores(S: Tensor, masks: ContrastiveMasks, labels, delta: float,
                       train_mask=None, rule: str = "same_class") -> tuple[Tensor, Tensor]:
    """Per-node positive and negative scores, each shaped (N, 1).

    Only pairs of training nodes contribute when ``train_mask`` is given.
    """
    if not delta > 0:
        raise ConfigError(f"margin delta must be > 0, got {delta}")
    n = S.shape[0]
    if masks.d_pos.shape != (n, n):
        raise DimensionError(f"masks {masks.d_pos.shape} vs similarity {S.shape}")
    pos = positive_indicator(labels, rule)
    t = _train_vector(n, train_mask)
    pairs = np.outer(t, t)
    S_pos = ops.mul(S, masks.d_pos.astype(np.float64))
    S_neg = ops.mul(S, masks.d_neg.astype(np.float64))
    P_s = ops.row_sum(ops.mul(S_pos, pos * pairs))
    hinge = ops.square(ops.maximum(ops.sub(S_neg, delta), 0.0))
    N_s = ops.row_sum(ops.mul(hinge, (1.0 - pos) * pairs))
    return P_s, N_s


def _neg_log_sum(scores: Tensor, eps: float, t: np.ndarray, label: str) -> Tensor:
    if np.any(scores.data + eps <= 0):
        warnings.warn(f"{label} score + eps <= 0; clamping to eps", RuntimeWarning, stacklevel=3)
        scores = ops.maximum(scores, 0.0)
    logs = ops.log(ops.add(scores, eps))
    return ops.scale(ops.total(ops.mul(logs, t[:, None])), -1.0)


def contrastive_loss(P_s: Tensor, N_s: Tensor, epsilon: float = EPSILON,
                     train_mask=None) -> tuple[Tensor, Tensor, Tensor]:
    t = _train_vector(P_s.shape[0], train_mask)
    l_pos = _neg_log_sum(P_s, epsilon, t, "positive")
    l_neg = _neg_log_sum(N_s, epsilon, t, "negative")
    return l_pos, l_neg, ops.add(l_pos, l_neg)


def ce_heads(Z_I: Tensor, Z_C: Tensor, head_I: Affine, head_C: Affine, labels,
             train_mask=None) -> tuple[Tensor, Tensor, np.ndarray, np.ndarray]:
    """Summed cross-entropy of each branch head over the training nodes."""
    Y = check_one_hot(labels)
    t = _train_vector(Y.shape[0], train_mask)
    target = Y * t[:, None]
    out = []
    for Z, head in ((Z_I, head_I), (Z_C, head_C)):
        logp = ops.log_softmax(head(Z))
        if logp.shape != Y.shape:
            raise DimensionError(f"head output {logp.shape} vs labels {Y.shape}")
        out.append((ops.scale(ops.total(ops.mul(logp, target)), -1.0), np.exp(logp.data)))
    (l_I, p_I), (l_C, p_C) = out
    return l_I, l_C, p_I, p_C


def diag_reference(a_hat_I: SelfLoopGraph, a_hat_C: SelfLoopGraph, which: str) -> SelfLoopGraph:
    if which == "union":
        return union_graph(a_hat_I, a_hat_C)
    if which == "image":
        return a_hat_I
    if which == "clinical":
        return a_hat_C
    raise ConfigError(f"unknown diag reference {which!r}; expected union, image or clinical")


def diag_loss(S: Tensor, a_ref: SelfLoopGraph, train_mask=None) -> Tensor:
    """(1/N) sum_ij (S_ij - D_ii)^2 over (training) node pairs, D_ii = degree."""
    n = S.shape[0]
    if a_ref.n != n:
        raise DimensionError(f"reference graph has {a_ref.n} nodes, similarity has {n}")
    t = _train_vector(n, train_mask)
    resid = ops.square(ops.sub(S, a_ref.degree[:, None]))
    return ops.scale(ops.total(ops.mul(resid, np.outer(t, t))), 1.0 / t.sum())


def combine(l_image: Tensor, l_clinical: Tensor, l_contrastive: Tensor, l_diag: Tensor,
            beta: float, mode: str = "full") -> Tensor:
    """Weighted objective. ``full`` is (1-b)(L_I + L_C) + b L_con + L_diag."""
    if not 0.0 <= beta <= 1.0:
        raise ConfigError(f"beta must lie in [0, 1], got {beta}")
    ce = ops.add(l_image, l_clinical)
    if mode == "ce_only":
        return ce
    if mode == "ce_plus_contrastive":
        return ops.add(ce, l_contrastive)
    if mode == "full":
        return ops.add(ops.add(ops.scale(ce, 1.0 - beta), ops.scale(l_contrastive, beta)), l_diag)
    raise ConfigError(f"unknown loss mode {mode!r}; expected one of {LOSS_MODES}")


def recombine(report: LossReport, mode: str = "full") -> float:
    """Plain-float replay of ``combine`` used to audit stored reports."""
    ce = report.l_image + report.l_clinical
    if mode == "ce_only":
        return ce
    if mode == "ce_plus_contrastive":
        return ce + report.l_contrastive
    return (1.0 - report.beta) * ce + report.beta * report.l_contrastive + report.l_diag


def total_loss(l_image: Tensor, l_clinical: Tensor, l_pos: Tensor, l_neg: Tensor,
               l_contrastive: Tensor, l_diag: Tensor, beta: float, delta: float,
               mode: str = "full") -> tuple[Tensor, LossReport]:
    total = combine(l_image, l_clinical, l_contrastive, l_diag, beta, mode)
    report = LossReport(
        l_image=l_image.item(), l_clinical=l_clinical.item(), l_pos=l_pos.item(),
        l_neg=l_neg.item(), l_contrastive=l_contrastive.item(), l_diag=l_diag.item(),
        l_total=total.item(), beta=beta, delta=delta,
    )
    return total, report
