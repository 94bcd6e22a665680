"""Cross-graph fusion: concatenation, gated scaling, branch embeddings, shared space."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from cgmcl.diffcore import Tensor, ops
from cgmcl.diffcore.ops import stable_sigmoid
from cgmcl.encoders import Affine, ZetaMlp, zeta_forward
from cgmcl.errors import ConfigError, DimensionError

KL_EPS = 1e-8


@dataclass
class FusionBundle:
    H_I: Tensor
    H_C: Tensor
    cat_I: Tensor
    cat_C: Tensor
    gate_I: Tensor | None
    gate_C: Tensor | None
    E_I: Tensor
    E_C: Tensor
    Z_I: Tensor
    Z_C: Tensor
    Z_shared: Tensor
    S: Tensor


def concat_with_raw(H: Tensor, raw) -> Tensor:
    raw = raw if isinstance(raw, Tensor) else Tensor(raw)
    if raw.data.ndim != 2 or H.shape[0] != raw.shape[0]:
        raise DimensionError(f"row mismatch: {H.shape} vs {raw.shape}")
    if raw.shape[1] == 0:
        return H
    return ops.concat([H, raw])


def imfes(H: Tensor, cat: Tensor, mlp: ZetaMlp) -> tuple[Tensor, Tensor]:
    """Scale H by the sigmoid gate zeta(cat). Returns (E, gate)."""
    if mlp.f_out != H.shape[1]:
        raise ConfigError(f"gate width {mlp.f_out} does not match encoder width {H.shape[1]}")
    gate = zeta_forward(cat, mlp)
    return ops.mul(H, gate), gate


def branch_embed(cat: Tensor, E: Tensor, proj: Affine) -> Tensor:
    return ops.tanh(proj(ops.concat([cat, E])))


def shared_space(Z_I: Tensor, Z_C: Tensor) -> Tensor:
    if Z_I.shape != Z_C.shape:
        raise DimensionError(f"branch embeddings differ in shape: {Z_I.shape} vs {Z_C.shape}")
    return ops.sigmoid(ops.add(Z_I, Z_C))


def similarity_matrix(Z: Tensor) -> Tensor:
    return ops.matmul(Z, ops.transpose(Z))


def kl_alignment(Z_I, Z_C, eps: float = KL_EPS) -> float:
    """Mean elementwise Bernoulli KL(sigmoid(Z_I) || sigmoid(Z_C))."""
    a = Z_I.data if isinstance(Z_I, Tensor) else np.asarray(Z_I, dtype=np.float64)
    b = Z_C.data if isinstance(Z_C, Tensor) else np.asarray(Z_C, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch {a.shape} vs {b.shape}")
    p, q = stable_sigmoid(a), stable_sigmoid(b)
    kl = (p * np.log((p + eps) / (q + eps))
          + (1.0 - p) * np.log((1.0 - p + eps) / (1.0 - q + eps)))
    # eps-guarded terms can dip a hair below zero at p == q
    return max(float(kl.mean()), 0.0)


def write_embeddings(path: str | Path, patient_ids: Sequence[str], Z) -> None:
    Z = Z.data if isinstance(Z, Tensor) else np.asarray(Z)
    header = ["patient_id"] + [f"dim_{j}" for j in range(Z.shape[1])]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for pid, row in zip(patient_ids, Z):
            fh.write(pid + "," + ",".join(repr(float(v)) for v in row) + "\n")
