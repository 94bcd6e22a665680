"""K-nearest-neighbour patient graphs and their self-loop / normalized variants."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from cgmcl.errors import ConfigError, DataError, DimensionError


@dataclass(frozen=True)
class ModalGraph:
    """Symmetric binary adjacency with an empty diagonal."""

    adjacency: np.ndarray
    k: int

    @property
    def n(self) -> int:
        return self.adjacency.shape[0]

    def degrees(self) -> np.ndarray:
        return self.adjacency.sum(axis=1)

    def edges(self) -> list[tuple[int, int]]:
        i, j = np.nonzero(np.triu(self.adjacency, 1))
        return list(zip(i.tolist(), j.tolist()))


@dataclass(frozen=True)
class SelfLoopGraph:
    adjacency_hat: np.ndarray
    degree: np.ndarray

    @property
    def n(self) -> int:
        return self.adjacency_hat.shape[0]


def default_k(n: int) -> int:
    return 10 if n >= 100 else max(2, n // 10)


def pairwise_sq_distances(features: np.ndarray) -> np.ndarray:
    diff = features[:, None, :] - features[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def knn_neighbors(features, k: int) -> np.ndarray:
    """Indices of the k nearest other rows, ties broken by lower row index."""
    X = np.asarray(features, dtype=np.float64)
    if X.ndim != 2:
        raise DimensionError(f"features must be a matrix, got shape {X.shape}")
    n = X.shape[0]
    if k < 1:
        raise ConfigError(f"k must be positive, got {k}")
    if k >= n:
        raise ConfigError(f"k={k} needs at least k+1={k + 1} patients, got {n}")
    if not np.all(np.isfinite(X)):
        raise DataError("features contain NaN or Inf")
    d = pairwise_sq_distances(X)
    np.fill_diagonal(d, np.inf)
    # stable sort keeps index order among equal distances
    order = np.argsort(d, axis=1, kind="stable")
    return order[:, :k]


def knn_build(features, k: int) -> ModalGraph:
    nbrs = knn_neighbors(features, k)
    n = nbrs.shape[0]
    A = np.zeros((n, n), dtype=np.int8)
    rows = np.repeat(np.arange(n), k)
    A[rows, nbrs.reshape(-1)] = 1
    A = np.maximum(A, A.T)
    return ModalGraph(adjacency=A, k=k)


def with_self_loops(g: ModalGraph) -> SelfLoopGraph:
    A_hat = g.adjacency.astype(np.int8).copy()
    np.fill_diagonal(A_hat, 1)
    return SelfLoopGraph(adjacency_hat=A_hat, degree=A_hat.sum(axis=1).astype(np.float64))


def gcn_normalize(g: SelfLoopGraph) -> np.ndarray:
    inv_sqrt = 1.0 / np.sqrt(g.degree)
    return inv_sqrt[:, None] * g.adjacency_hat.astype(np.float64) * inv_sqrt[None, :]


def union_graph(a: SelfLoopGraph, b: SelfLoopGraph) -> SelfLoopGraph:
    if a.n != b.n:
        raise DimensionError(f"graph sizes differ: {a.n} vs {b.n}")
    A = ((a.adjacency_hat.astype(int) + b.adjacency_hat.astype(int)) > 0).astype(np.int8)
    return SelfLoopGraph(adjacency_hat=A, degree=A.sum(axis=1).astype(np.float64))


def write_edge_list(g: ModalGraph, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for i, j in g.edges():
            fh.write(f"{i} {j}\n")


def read_edge_list(path: str | Path, n: int, k: int = 0) -> ModalGraph:
    A = np.zeros((n, n), dtype=np.int8)
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            i, j = (int(tok) for tok in line.split())
            A[i, j] = A[j, i] = 1
    return ModalGraph(adjacency=A, k=k)
