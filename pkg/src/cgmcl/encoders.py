"""Per-modality encoders: affine feature encoder, GAT and GCN layers, gating MLP."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from cgmcl.diffcore import ParamStore, Tensor, ops
from cgmcl.diffcore.ops import LEAKY_SLOPE
from cgmcl.errors import ConfigError, DimensionError
from cgmcl.graphs import ModalGraph, SelfLoopGraph, with_self_loops


def uniform_init(rng: np.random.Generator, fan_in: int, shape: tuple[int, ...]) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def _neighbourhood(g: ModalGraph | SelfLoopGraph) -> np.ndarray:
    if isinstance(g, ModalGraph):
        g = with_self_loops(g)
    return g.adjacency_hat.astype(bool)


@dataclass
class Affine:
    W: Tensor
    b: Tensor

    @staticmethod
    def init(store: ParamStore, prefix: str, f_in: int, f_out: int, rng) -> None:
        store.add(f"{prefix}.W", uniform_init(rng, f_in, (f_in, f_out)))
        store.add(f"{prefix}.b", uniform_init(rng, f_in, (1, f_out)))

    @classmethod
    def bind(cls, params: dict[str, Tensor], prefix: str) -> "Affine":
        return cls(params[f"{prefix}.W"], params[f"{prefix}.b"])

    def __call__(self, X: Tensor) -> Tensor:
        if X.shape[1] != self.W.shape[0]:
            raise DimensionError(f"affine input width {X.shape[1]} != {self.W.shape[0]}")
        return ops.add(ops.matmul(X, self.W), self.b)


def encode_features(raw, encoder: Affine | None) -> Tensor:
    """tanh(raw W + b); ``encoder=None`` passes the features through unchanged."""
    X = raw if isinstance(raw, Tensor) else Tensor(raw)
    if encoder is None:
        return X
    if X.shape[1] != encoder.W.shape[0]:
        raise ConfigError(f"encoder expects {encoder.W.shape[0]} input columns, got {X.shape[1]}")
    return ops.tanh(encoder(X))


@dataclass
class GatLayer:
    """Single-head graph attention with self-loops in every neighbourhood."""

    W: Tensor
    attn: Tensor  # shape (2 * f_out, 1): [source half; target half]
    leaky_slope: float = LEAKY_SLOPE

    @staticmethod
    def init(store: ParamStore, prefix: str, f_in: int, f_out: int, rng) -> None:
        store.add(f"{prefix}.W", uniform_init(rng, f_in, (f_in, f_out)))
        store.add(f"{prefix}.attn", uniform_init(rng, f_out, (2 * f_out, 1)))

    @classmethod
    def bind(cls, params: dict[str, Tensor], prefix: str) -> "GatLayer":
        return cls(params[f"{prefix}.W"], params[f"{prefix}.attn"])

    @property
    def f_out(self) -> int:
        return self.W.shape[1]


def _gat_logits(X: Tensor, layer: GatLayer) -> tuple[Tensor, Tensor]:
    """Dense logits e_ij = leaky_relu(a_src . Wx_i + a_dst . Wx_j) and Wx."""
    if X.shape[1] != layer.W.shape[0]:
        raise DimensionError(f"GAT input width {X.shape[1]} != {layer.W.shape[0]}")
    Wx = ops.matmul(X, layer.W)
    f = layer.f_out
    eye, zero = np.eye(f), np.zeros((f, f))
    # selector matmuls stand in for slicing the two halves of attn
    a_src = ops.matmul(np.hstack([eye, zero]), layer.attn)
    a_dst = ops.matmul(np.hstack([zero, eye]), layer.attn)
    src = ops.matmul(Wx, a_src)
    dst = ops.matmul(Wx, a_dst)
    pair = ops.add(src, ops.transpose(dst))  # (N,1) + (1,N) -> (N,N)
    return ops.leaky_relu(pair, layer.leaky_slope), Wx


def gat_attention_logits(X: Tensor, layer: GatLayer, g: ModalGraph | SelfLoopGraph) -> np.ndarray:
    """Masked attention logits for inspection; -inf outside each neighbourhood."""
    logits, _ = _gat_logits(X, layer)
    mask = _neighbourhood(g)
    if mask.shape[0] != X.shape[0]:
        raise DimensionError(f"graph has {mask.shape[0]} nodes, features have {X.shape[0]}")
    return np.where(mask, logits.data, -np.inf)


def gat_attention(X: Tensor, layer: GatLayer, g: ModalGraph | SelfLoopGraph) -> tuple[Tensor, Tensor]:
    mask = _neighbourhood(g)
    if mask.shape[0] != X.shape[0]:
        raise DimensionError(f"graph has {mask.shape[0]} nodes, features have {X.shape[0]}")
    logits, Wx = _gat_logits(X, layer)
    return ops.masked_softmax(logits, mask), Wx


def gat_forward(X: Tensor, layer: GatLayer, g: ModalGraph | SelfLoopGraph) -> Tensor:
    alpha, Wx = gat_attention(X, layer, g)
    return ops.tanh(ops.matmul(alpha, Wx))


@dataclass
class GcnLayer:
    W: Tensor

    @staticmethod
    def init(store: ParamStore, prefix: str, f_in: int, f_out: int, rng) -> None:
        store.add(f"{prefix}.W", uniform_init(rng, f_in, (f_in, f_out)))

    @classmethod
    def bind(cls, params: dict[str, Tensor], prefix: str) -> "GcnLayer":
        return cls(params[f"{prefix}.W"])

    @property
    def f_out(self) -> int:
        return self.W.shape[1]


def gcn_forward(X: Tensor, layer: GcnLayer, norm_adj: np.ndarray) -> Tensor:
    if norm_adj.shape != (X.shape[0], X.shape[0]):
        raise DimensionError(f"normalized adjacency {norm_adj.shape} vs {X.shape[0]} nodes")
    if X.shape[1] != layer.W.shape[0]:
        raise DimensionError(f"GCN input width {X.shape[1]} != {layer.W.shape[0]}")
    return ops.tanh(ops.matmul(ops.matmul(norm_adj, X), layer.W))


@dataclass
class ZetaMlp:
    """Two affine layers, tanh hidden activation, sigmoid output gate."""

    hidden: Affine
    out: Affine

    @staticmethod
    def init(store: ParamStore, prefix: str, f_in: int, width: int, rng) -> None:
        Affine.init(store, f"{prefix}.0", f_in, width, rng)
        Affine.init(store, f"{prefix}.1", width, width, rng)

    @classmethod
    def bind(cls, params: dict[str, Tensor], prefix: str) -> "ZetaMlp":
        return cls(Affine.bind(params, f"{prefix}.0"), Affine.bind(params, f"{prefix}.1"))

    @property
    def f_in(self) -> int:
        return self.hidden.W.shape[0]

    @property
    def f_out(self) -> int:
        return self.out.W.shape[1]


def zeta_forward(Hcat: Tensor, mlp: ZetaMlp) -> Tensor:
    if Hcat.shape[1] != mlp.f_in:
        raise DimensionError(f"gate MLP expects width {mlp.f_in}, got {Hcat.shape[1]}")
    return ops.sigmoid(mlp.out(ops.tanh(mlp.hidden(Hcat))))
