"""Parameter layout and forward pass of the two-graph fusion model."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from cgmcl import losses
from cgmcl.data import Cohort
from cgmcl.diffcore import ParamStore, Tensor
from cgmcl.encoders import Affine, GatLayer, GcnLayer, ZetaMlp, encode_features, gat_forward, gcn_forward
from cgmcl.errors import ContractError
from cgmcl.fusion import (FusionBundle, branch_embed, concat_with_raw, imfes, shared_space,
                          similarity_matrix)
from cgmcl.graphs import ModalGraph, SelfLoopGraph, default_k, gcn_normalize, knn_build, with_self_loops
from cgmcl.losses import ContrastiveMasks, LossReport
from cgmcl.trainkit.config import TrainConfig

MODALITIES = ("image", "clinical")


@dataclass
class Graphs:
    image: ModalGraph
    clinical: ModalGraph
    hat_image: SelfLoopGraph
    hat_clinical: SelfLoopGraph
    norm_image: np.ndarray
    norm_clinical: np.ndarray
    masks: ContrastiveMasks
    diag_ref: SelfLoopGraph

    @classmethod
    def from_adjacency(cls, image: ModalGraph, clinical: ModalGraph, diag_reference: str) -> "Graphs":
        hi, hc = with_self_loops(image), with_self_loops(clinical)
        return cls(image, clinical, hi, hc, gcn_normalize(hi), gcn_normalize(hc),
                   losses.build_masks(hi, hc), losses.diag_reference(hi, hc, diag_reference))


@dataclass
class ForwardResult:
    bundle: FusionBundle
    image_encoded: Tensor
    loss: Tensor
    report: LossReport
    probs_image: np.ndarray
    probs_clinical: np.ndarray
    P_s: Tensor
    N_s: Tensor

    @property
    def probs(self) -> np.ndarray:
        return 0.5 * (self.probs_image + self.probs_clinical)


class CGMCLModel:
    """Shapes and parameter names for one configuration and cohort layout."""

    def __init__(self, config: TrainConfig, d_image_in: int, d_clinical_in: int, num_classes: int):
        self.config = config
        self.d_in = {"image": d_image_in, "clinical": d_clinical_in}
        self.num_classes = num_classes

    @classmethod
    def for_cohort(cls, config: TrainConfig, cohort: Cohort) -> "CGMCLModel":
        return cls(config, cohort.image_features.shape[1], cohort.clinical_features.shape[1],
                   cohort.num_classes)

    def raw_width(self, modality: str) -> int:
        """Width of the node features entering the graph encoder."""
        return self.config.d_image if modality == "image" else self.d_in["clinical"]

    def backbone(self, modality: str) -> str:
        return self.config.backbone_image if modality == "image" else self.config.backbone_clinical

    def init_params(self, seed: int | None = None) -> ParamStore:
        cfg = self.config
        rng = np.random.default_rng(cfg.seed if seed is None else seed)
        store = ParamStore()
        Affine.init(store, "enc_image", self.d_in["image"], cfg.d_image, rng)
        for m in MODALITIES:
            width = self.raw_width(m)
            for layer in range(cfg.graph_layers):
                f_in = width if layer == 0 else cfg.d_h
                init = GatLayer.init if self.backbone(m) == "gat" else GcnLayer.init
                init(store, f"gnn_{m}.{layer}", f_in, cfg.d_h, rng)
            cat_width = cfg.d_h if cfg.no_concat else cfg.d_h + width
            if not cfg.no_imfes:
                ZetaMlp.init(store, f"zeta_{m}", cat_width, cfg.d_h, rng)
            Affine.init(store, f"proj_{m}", cat_width + cfg.d_h, cfg.d_c, rng)
            Affine.init(store, f"head_{m}", cfg.d_c, self.num_classes, rng)
        return store

    # -- graphs -------------------------------------------------------------

    def encode_image(self, params: dict[str, Tensor], cohort: Cohort) -> Tensor:
        return encode_features(cohort.image_features, Affine.bind(params, "enc_image"))

    def build_graphs(self, store: ParamStore, cohort: Cohort) -> Graphs:
        """KNN graphs on the initial image encoding and on the clinical features."""
        cfg = self.config
        encoded = self.encode_image(store.constants(), cohort).data
        k_i = cfg.k_image or default_k(cohort.n)
        k_c = cfg.k_clinical or default_k(cohort.n)
        return Graphs.from_adjacency(knn_build(encoded, k_i),
                                     knn_build(cohort.clinical_features, k_c),
                                     cfg.diag_reference)

    # -- forward ------------------------------------------------------------

    def _graph_stack(self, params, X: Tensor, modality: str, graphs: Graphs) -> Tensor:
        H = X
        for layer in range(self.config.graph_layers):
            prefix = f"gnn_{modality}.{layer}"
            if self.backbone(modality) == "gat":
                g = graphs.hat_image if modality == "image" else graphs.hat_clinical
                H = gat_forward(H, GatLayer.bind(params, prefix), g)
            else:
                norm = graphs.norm_image if modality == "image" else graphs.norm_clinical
                H = gcn_forward(H, GcnLayer.bind(params, prefix), norm)
        return H

    def _branch(self, params, raw: Tensor, modality: str, graphs: Graphs):
        cfg = self.config
        H = self._graph_stack(params, raw, modality, graphs)
        cat = H if cfg.no_concat else concat_with_raw(H, raw)
        if cfg.no_imfes:
            E, gate = H, None
        else:
            E, gate = imfes(H, cat, ZetaMlp.bind(params, f"zeta_{modality}"))
        Z = branch_embed(cat, E, Affine.bind(params, f"proj_{modality}"))
        return H, cat, gate, E, Z

    def fuse(self, params: dict[str, Tensor], cohort: Cohort, graphs: Graphs) -> tuple[FusionBundle, Tensor]:
        I_enc = self.encode_image(params, cohort)
        C = Tensor(cohort.clinical_features)
        H_I, cat_I, g_I, E_I, Z_I = self._branch(params, I_enc, "image", graphs)
        H_C, cat_C, g_C, E_C, Z_C = self._branch(params, C, "clinical", graphs)
        Z = shared_space(Z_I, Z_C)
        S = similarity_matrix(Z)
        return FusionBundle(H_I, H_C, cat_I, cat_C, g_I, g_C, E_I, E_C, Z_I, Z_C, Z, S), I_enc

    def forward(self, params: dict[str, Tensor], cohort: Cohort, graphs: Graphs,
                train_mask: np.ndarray | None = None) -> ForwardResult:
        cfg = self.config
        if train_mask is None:
            train_mask = cohort.train_mask
        bundle, I_enc = self.fuse(params, cohort, graphs)
        Y = cohort.one_hot()
        t = np.asarray(train_mask, dtype=np.float64)
        l_I, l_C, p_I, p_C = losses.ce_heads(bundle.Z_I, bundle.Z_C,
                                             Affine.bind(params, "head_image"),
                                             Affine.bind(params, "head_clinical"), Y, t)
        P_s, N_s = losses.contrastive_scores(bundle.S, graphs.masks, Y, cfg.delta, t,
                                             cfg.positive_rule)
        l_pos, l_neg, l_con = losses.contrastive_loss(P_s, N_s, cfg.epsilon, t)
        l_diag = losses.diag_loss(bundle.S, graphs.diag_ref, t)
        total, report = losses.total_loss(l_I, l_C, l_pos, l_neg, l_con, l_diag,
                                          cfg.beta, cfg.delta, cfg.loss_mode)
        return ForwardResult(bundle, I_enc, total, report, p_I, p_C, P_s, N_s)

    def clinical_gate(self, store: ParamStore, cohort: Cohort, graphs: Graphs) -> np.ndarray:
        if self.config.no_imfes:
            raise ContractError("importance scores need the gating module (no_imfes is set)")
        bundle, _ = self.fuse(store.constants(), cohort, graphs)
        return bundle.gate_C.data
