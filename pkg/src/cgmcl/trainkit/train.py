"""Training loop, evaluation, modality importance scores and ablation grids."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from cgmcl.data import Cohort, generate_synthetic, load_cohort, split_cohort, standardize
from cgmcl.diffcore import SGD, Adam, ParamStore, Tape
from cgmcl.errors import ConfigError, ContractError, DataError, DomainError, NumericalError
from cgmcl.fusion import kl_alignment
from cgmcl.graphs import default_k, write_edge_list
from cgmcl.losses import LOSS_MODES, LossReport
from cgmcl.model import CGMCLModel, Graphs
from cgmcl.trainkit import exports
from cgmcl.trainkit.config import RunConfig, TrainConfig
from cgmcl.trainkit.metrics import MetricsReport, aggregate, metrics_from_probs

log = logging.getLogger(__name__)

BETA_GRID = (0.0, 0.25, 0.5, 0.65, 0.75, 1.0)
K_GRID = (3, 5, 10, 15, 20)
ABLATION_AXES = ("beta_sweep", "module", "loss_mode", "k_sweep")


@dataclass
class TrainResult:
    store: ParamStore
    model: CGMCLModel
    graphs: Graphs
    losses: list[LossReport] = field(default_factory=list)
    kl: list[float] = field(default_factory=list)


@dataclass
class EvalResult:
    fused: MetricsReport
    image: MetricsReport
    clinical: MetricsReport
    probs: np.ndarray

    def by_scope(self) -> dict[str, MetricsReport]:
        return {"fused": self.fused, "image": self.image, "clinical": self.clinical}


def prepare_cohort(run: RunConfig) -> Cohort:
    """Build the cohort described by a run config, split and standardized."""
    cfg = run.train
    if run.synthetic is not None:
        cohort = generate_synthetic(run.synthetic)
        return standardize(split_cohort(cohort, cfg.train_fraction, cfg.seed))
    src = run.data
    return load_cohort(src.image_csv, src.clinical_csv, src.labels_csv,
                       label_column=cfg.label_column, train_fraction=cfg.train_fraction,
                       seed=cfg.seed, strict=src.strict)


def prepare_raw_cohort(run: RunConfig) -> Cohort:
    """Unsplit, unstandardized cohort for repeated runs that re-split per seed."""
    if run.synthetic is not None:
        return generate_synthetic(run.synthetic)
    src = run.data
    return load_cohort(src.image_csv, src.clinical_csv, src.labels_csv,
                       label_column=run.train.label_column, train_fraction=run.train.train_fraction,
                       seed=run.train.seed, do_standardize=False, strict=src.strict)


def _check_cohort(cohort: Cohort) -> None:
    train = cohort.train_mask
    missing = set(range(cohort.num_classes)) - set(cohort.labels[train].tolist())
    if missing:
        raise DataError(f"classes absent from the training split: "
                        f"{[cohort.class_names[k] for k in sorted(missing)]}")


def make_optimizer(config: TrainConfig):
    if config.optimizer == "sgd":
        return SGD(lr=config.lr)
    return Adam(lr=config.lr)


def train(cohort: Cohort, config: TrainConfig) -> TrainResult:
    """Full-batch transductive training; graphs are built once before epoch 1.

    ``lr == 0`` keeps parameters frozen, which yields a constant trajectory.
    """
    config.validate()
    _check_cohort(cohort)
    model = CGMCLModel.for_cohort(config, cohort)
    store = model.init_params()
    graphs = model.build_graphs(store, cohort)
    optimizer = make_optimizer(config) if config.lr > 0 else None
    result = TrainResult(store=store, model=model, graphs=graphs)

    for epoch in range(1, config.epochs + 1):
        tape = Tape()
        try:
            out = model.forward(store.watch(tape), cohort, graphs)
        except (NumericalError, DomainError) as exc:
            raise NumericalError(f"epoch {epoch}: forward pass failed: {exc}") from exc
        bad = {k: v for k, v in out.report.terms().items() if not math.isfinite(v)}
        if bad:
            raise NumericalError(f"epoch {epoch}: non-finite loss terms {bad}")
        result.losses.append(out.report)
        result.kl.append(kl_alignment(out.bundle.Z_I, out.bundle.Z_C))
        if optimizer is not None:
            tape.backward(out.loss, store)
            optimizer.step(store)
    return result


def evaluate(store: ParamStore, cohort: Cohort, config: TrainConfig,
             graphs: Graphs | None = None) -> EvalResult:
    """Test-split metrics; the fused prediction averages the two heads' softmax."""
    test = cohort.test_mask
    if not test.any():
        raise DataError("test split is empty")
    model = CGMCLModel.for_cohort(config, cohort)
    if graphs is None:
        graphs = rebuild_graphs(model, cohort, config)
    out = model.forward(store.constants(), cohort, graphs)
    y = cohort.labels[test]
    return EvalResult(
        fused=metrics_from_probs(y, out.probs[test]),
        image=metrics_from_probs(y, out.probs_image[test]),
        clinical=metrics_from_probs(y, out.probs_clinical[test]),
        probs=out.probs,
    )


def rebuild_graphs(model: CGMCLModel, cohort: Cohort, config: TrainConfig) -> Graphs:
    """Recreate the training graphs from the seeded initial parameters."""
    return model.build_graphs(model.init_params(config.seed), cohort)


def importance_from_gate(clinical: np.ndarray, gate: np.ndarray,
                         first_weight: np.ndarray | None = None) -> np.ndarray:
    """Score = X^C * gate, with the gate mapped onto feature columns if needed.

    When the gate width differs from the number of clinical features, each
    feature receives the |W|-weighted average of the gate over the hidden
    units it feeds, using the clinical branch's first weight matrix W (F x d_h).
    """
    X = np.asarray(clinical, dtype=np.float64)
    G = np.asarray(gate, dtype=np.float64)
    if G.shape == X.shape:
        return X * G
    if first_weight is None or first_weight.shape != (X.shape[1], G.shape[1]):
        raise ContractError(f"cannot project gate of width {G.shape[1]} onto "
                            f"{X.shape[1]} clinical features")
    W = np.abs(first_weight)
    denom = W.sum(axis=1)
    denom = np.where(denom > 0, denom, 1.0)
    return X * ((G @ W.T) / denom[None, :])


def importance_scores(store: ParamStore, cohort: Cohort, config: TrainConfig,
                      graphs: Graphs | None = None) -> np.ndarray:
    if config.no_imfes:
        raise ContractError("importance scores need the gating module (no_imfes is set)")
    model = CGMCLModel.for_cohort(config, cohort)
    if graphs is None:
        graphs = rebuild_graphs(model, cohort, config)
    gate = model.clinical_gate(store, cohort, graphs)
    return importance_from_gate(cohort.clinical_features, gate,
                                store.value("gnn_clinical.0.W"))


# -- repeated runs and ablations ---------------------------------------------

def run_repeats(raw: Cohort, config: TrainConfig, repeats: int | None = None) -> list[EvalResult]:
    """Train/evaluate with seeds seed, seed+1, ...; each seed re-splits the cohort."""
    results = []
    for r in range(repeats or config.repeats):
        cfg = config.with_updates(seed=config.seed + r)
        cohort = standardize(split_cohort(raw, cfg.train_fraction, cfg.seed))
        res = train(cohort, cfg)
        results.append(evaluate(res.store, cohort, cfg, res.graphs))
    return results


def ablation_settings(axis: str, base: TrainConfig, n: int) -> list[tuple[str, TrainConfig]]:
    if axis == "beta_sweep":
        return [(f"beta={b:g}", base.with_updates(beta=b, loss_mode="full")) for b in BETA_GRID]
    if axis == "module":
        return [("full", base.with_updates(no_concat=False, no_imfes=False)),
                ("no_concat", base.with_updates(no_concat=True, no_imfes=False)),
                ("no_imfes", base.with_updates(no_concat=False, no_imfes=True))]
    if axis == "loss_mode":
        return [(mode, base.with_updates(loss_mode=mode)) for mode in LOSS_MODES]
    if axis == "k_sweep":
        ks = [k for k in K_GRID if k < n] or [default_k(n)]
        return [(f"k={k}", base.with_updates(k_image=k, k_clinical=k)) for k in ks]
    raise ConfigError(f"unknown ablation axis {axis!r}; expected one of {ABLATION_AXES}")


def ablate(raw: Cohort, base: TrainConfig, axis: str, repeats: int | None = None) -> list[dict]:
    """One table row per setting: fused metrics as mean and std over repeats."""
    rows = []
    for label, cfg in ablation_settings(axis, base, raw.n):
        agg = aggregate([r.fused for r in run_repeats(raw, cfg, repeats)])
        row: dict = {"axis": axis, "setting": label, "runs": agg.runs}
        for name, value in agg.row().items():
            row[name] = value
            row[f"{name}_std"] = agg.std[name]
        rows.append(row)
        log.info("%s %s acc=%.4f auc=%.4f", axis, label, agg.acc, agg.auc)
    return rows


# -- full run with exports ------------------------------------------------------

def run_and_export(run: RunConfig, out_dir: str | Path | None = None) -> tuple[TrainResult, EvalResult]:
    out = Path(out_dir or run.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg = run.train
    cohort = prepare_cohort(run)
    res = train(cohort, cfg)
    ev = evaluate(res.store, cohort, cfg, res.graphs)
    export_run(out, run, cohort, res, ev)
    return res, ev


def export_run(out: Path, run: RunConfig, cohort: Cohort, res: TrainResult, ev: EvalResult) -> None:
    from cgmcl.trainkit.config import save_run_config

    cfg = run.train
    save_run_config(run, out / "config.json")
    exports.write_params(res.store, out / "params.bin")
    exports.write_losses(out / "losses.csv", res.losses, res.kl)
    exports.write_kl(out / "kl.csv", res.kl)
    exports.write_metrics(out / "metrics.csv", ev.by_scope())
    bundle, _ = res.model.fuse(res.store.constants(), cohort, res.graphs)
    for tag, Z in (("shared", bundle.Z_shared), ("image", bundle.Z_I), ("clinical", bundle.Z_C)):
        exports.write_matrix(out / f"embeddings_{tag}.csv", cohort.patient_ids,
                             [f"dim_{j}" for j in range(Z.shape[1])], Z.data)
    if not cfg.no_imfes:
        scores = importance_scores(res.store, cohort, cfg, res.graphs)
        exports.write_matrix(out / "importance.csv", cohort.patient_ids, cohort.clinical_names, scores)
    write_edge_list(res.graphs.image, out / "graph_image.txt")
    write_edge_list(res.graphs.clinical, out / "graph_clinical.txt")
