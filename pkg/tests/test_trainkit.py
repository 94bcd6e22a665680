import json

import numpy as np
import pytest

from cgmcl.data import SyntheticSpec, generate_synthetic
from cgmcl.diffcore import ParamStore
from cgmcl.errors import ConfigError, ContractError, DataError, DomainError, NumericalError
from cgmcl.fixtures import gradcheck_cohort, gradcheck_config
from cgmcl.losses import recombine
from cgmcl.trainkit import exports
from cgmcl.trainkit.cli import main
from cgmcl.trainkit.config import (RunConfig, TrainConfig, apply_overrides, load_run_config,
                                   save_run_config)
from cgmcl.trainkit.train import (BETA_GRID, ablate, ablation_settings, evaluate,
                                  importance_from_gate, importance_scores, rebuild_graphs, train)


def _small(**overrides):
    base = dict(epochs=5, lr=1e-2)
    base.update(overrides)
    return gradcheck_config("gat", **base)


def _run_config(tmp_path, **train):
    cfg = {"epochs": 3, "d_h": 8, "d_c": 8, "d_image": 8, "output_dir": str(tmp_path / "run"),
           "synthetic": {"n": 40, "D": 6, "F": 5, "separation": 3.0, "seed": 2}}
    cfg.update(train)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg))
    return path


# -- training ----------------------------------------------------------------------

def test_zero_lr_constant_trajectory():
    res = train(gradcheck_cohort(), _small(lr=0.0))
    totals = [r.l_total for r in res.losses]
    assert len(totals) == 5 and len(set(totals)) == 1
    assert len(set(res.kl)) == 1


def test_same_seed_same_result():
    a = train(gradcheck_cohort(), _small())
    b = train(gradcheck_cohort(), _small())
    assert [r.l_total for r in a.losses] == [r.l_total for r in b.losses]
    assert a.kl == b.kl


def test_training_reduces_loss_and_reports_recombine():
    res = train(gradcheck_cohort(), _small(epochs=30))
    assert res.losses[-1].l_total < res.losses[0].l_total
    for rep in res.losses:
        assert recombine(rep) == rep.l_total


def test_graphs_fixed_during_training():
    res = train(gradcheck_cohort(), _small())
    cohort = gradcheck_cohort()
    again = rebuild_graphs(res.model, cohort, _small())
    np.testing.assert_array_equal(again.image.adjacency, res.graphs.image.adjacency)


def test_class_missing_from_train_split():
    cohort = gradcheck_cohort()
    cohort.split[:] = cohort.labels == 0
    with pytest.raises(DataError):
        train(cohort, _small())


def test_evaluate_requires_test_split():
    res = train(gradcheck_cohort(), _small())
    cohort = gradcheck_cohort()
    ev = evaluate(res.store, cohort, _small(), res.graphs)
    np.testing.assert_allclose(ev.probs.sum(axis=1), 1.0, atol=1e-12)
    assert ev.fused.confusion.sum() == cohort.test_mask.sum()
    cohort.split[:] = True
    with pytest.raises(DataError):
        evaluate(res.store, cohort, _small(), res.graphs)


# -- importance scores ---------------------------------------------------------------

def test_importance_zero_features():
    assert (importance_from_gate(np.zeros((3, 4)), np.full((3, 4), 0.7)) == 0).all()


def test_importance_half_gate():
    X = np.random.default_rng(0).normal(size=(3, 4))
    np.testing.assert_array_equal(importance_from_gate(X, np.full((3, 4), 0.5)), X / 2)


def test_importance_projection_oracle():
    rng = np.random.default_rng(1)
    X, G, W = rng.normal(size=(2, 3)), rng.random((2, 5)), rng.normal(size=(3, 5))
    got = importance_from_gate(X, G, W)
    for n in range(2):
        for f in range(3):
            weights = [abs(W[f][h]) for h in range(5)]
            projected = sum(G[n][h] * weights[h] for h in range(5)) / sum(weights)
            assert got[n, f] == pytest.approx(X[n][f] * projected, abs=1e-14)


def test_importance_shape_and_contract():
    cohort = gradcheck_cohort()
    res = train(cohort, _small())
    scores = importance_scores(res.store, cohort, _small(), res.graphs)
    assert scores.shape == cohort.clinical_features.shape and np.isfinite(scores).all()
    with pytest.raises(ContractError):
        importance_scores(res.store, cohort, _small(no_imfes=True), res.graphs)
    with pytest.raises(ContractError):
        importance_from_gate(np.ones((2, 3)), np.ones((2, 5)))


# -- ablation grids ------------------------------------------------------------------

def test_ablation_axes():
    base = TrainConfig()
    assert [c.beta for _, c in ablation_settings("beta_sweep", base, 200)] == list(BETA_GRID)
    assert [s for s, _ in ablation_settings("module", base, 200)] == ["full", "no_concat", "no_imfes"]
    assert [c.loss_mode for _, c in ablation_settings("loss_mode", base, 200)] == \
        ["ce_only", "ce_plus_contrastive", "full"]
    assert [c.k_image for _, c in ablation_settings("k_sweep", base, 12)] == [3, 5, 10]
    with pytest.raises(ConfigError):
        ablation_settings("width", base, 200)


def test_ablate_rows():
    raw = generate_synthetic(SyntheticSpec(n=24, D=4, F=3, seed=5))
    rows = ablate(raw, gradcheck_config("gcn", epochs=2), "module", repeats=2)
    assert [r["setting"] for r in rows] == ["full", "no_concat", "no_imfes"]
    assert all(r["runs"] == 2 and 0 <= r["acc"] <= 1 for r in rows)


# -- configuration -------------------------------------------------------------------

@pytest.mark.parametrize("bad", [dict(beta=1.5), dict(delta=0.0), dict(lr=-1.0), dict(d_h=0),
                                 dict(loss_mode="all"), dict(backbone_image="mlp"),
                                 dict(train_fraction=1.0), dict(k_image=0)])
def test_config_validation(bad):
    with pytest.raises(ConfigError):
        TrainConfig(**bad).validate()


def test_unknown_key_rejected():
    with pytest.raises(ConfigError):
        TrainConfig.from_dict({"betta": 0.5})


def test_overrides_and_round_trip(tmp_path):
    path = _run_config(tmp_path)
    run = load_run_config(path, ["beta=0.25", "synthetic.seed=9", "backbone_clinical=gcn"])
    assert run.train.beta == 0.25 and run.synthetic.seed == 9
    assert run.train.backbone_clinical == "gcn"
    save_run_config(run, tmp_path / "saved.json")
    assert load_run_config(tmp_path / "saved.json").to_dict() == run.to_dict()
    with pytest.raises(ConfigError):
        apply_overrides({}, ["no_equals_sign"])


def test_exactly_one_source():
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"epochs": 1})


# -- params.bin ----------------------------------------------------------------------

def test_params_round_trip(tmp_path):
    res = train(gradcheck_cohort(), _small())
    exports.write_params(res.store, tmp_path / "p.bin")
    back = exports.read_params(tmp_path / "p.bin")
    assert back.names() == res.store.names()
    for name in back:
        np.testing.assert_array_equal(back.value(name), res.store.value(name))


def test_params_layout(tmp_path):
    s = ParamStore()
    s.add("w", np.array([[1.0, 2.0]]))
    exports.write_params(s, tmp_path / "p.bin")
    blob = (tmp_path / "p.bin").read_bytes()
    assert blob[:8] == b"CGMCLPAR"
    assert blob[8:16] == (1).to_bytes(4, "little") + (1).to_bytes(4, "little")
    assert blob[16:19] == b"\x01\x00w"
    assert blob[19] == 2 and blob[20:28] == (1).to_bytes(4, "little") + (2).to_bytes(4, "little")
    assert np.frombuffer(blob[28:], "<f8").tolist() == [1.0, 2.0]


@pytest.mark.parametrize("damage", [lambda b: b"XXXXXXXX" + b[8:], lambda b: b + b"\x00"])
def test_params_corruption(tmp_path, damage):
    res = train(gradcheck_cohort(), _small(epochs=1))
    exports.write_params(res.store, tmp_path / "p.bin")
    (tmp_path / "p.bin").write_bytes(damage((tmp_path / "p.bin").read_bytes()))
    with pytest.raises(DataError):
        exports.read_params(tmp_path / "p.bin")


# -- command line --------------------------------------------------------------------

def test_cli_train_and_eval(tmp_path, capsys):
    path = _run_config(tmp_path)
    out = tmp_path / "run"
    assert main(["train", "--config", str(path)]) == 0
    for name in ("config.json", "params.bin", "losses.csv", "kl.csv", "metrics.csv",
                 "embeddings_shared.csv", "embeddings_image.csv", "embeddings_clinical.csv",
                 "importance.csv", "graph_image.txt", "graph_clinical.txt"):
        assert (out / name).exists(), name
    first = (out / "metrics.csv").read_bytes()
    assert main(["eval", "--params", str(out / "params.bin"), "--out", str(tmp_path / "ev")]) == 0
    assert (tmp_path / "ev" / "metrics.csv").read_bytes() == first
    header = (out / "losses.csv").read_text().splitlines()[0]
    assert header == "epoch,l_image,l_clinical,l_pos,l_neg,l_contrastive,l_diag,l_total,kl_alignment"


def test_cli_validation_exit_codes(tmp_path, capsys):
    path = _run_config(tmp_path)
    assert main(["train", "--config", str(path), "--set", "beta=1.5"]) == 1
    assert "beta" in capsys.readouterr().err
    with pytest.raises(SystemExit) as info:
        main(["train", "--config", str(path), "--bogus"])
    assert info.value.code == 1
    with pytest.raises(SystemExit) as info:
        main([])
    assert info.value.code == 1
    assert main(["train", "--config", str(tmp_path / "missing.json")]) == 1


def _fail_on_third_call(monkeypatch):
    from cgmcl.model import CGMCLModel

    real = CGMCLModel.forward
    calls = {"n": 0}

    def forward(self, *args, **kwargs):
        calls["n"] += 1
        if calls["n"] == 3:
            raise DomainError("log of non-positive value")
        return real(self, *args, **kwargs)

    monkeypatch.setattr(CGMCLModel, "forward", forward)


def test_forward_failure_names_epoch(monkeypatch):
    _fail_on_third_call(monkeypatch)
    with pytest.raises(NumericalError, match="epoch 3"):
        train(gradcheck_cohort(), _small())


def test_cli_numerical_failure_exit_code(tmp_path, capsys, monkeypatch):
    _fail_on_third_call(monkeypatch)
    assert main(["train", "--config", str(_run_config(tmp_path))]) == 2
    assert "epoch 3" in capsys.readouterr().err


def test_cli_gradcheck(capsys):
    assert main(["gradcheck"]) == 0
    assert "max rel" in capsys.readouterr().out.lower()
    assert main(["gradcheck", "--tol", "1e-14"]) == 2


def test_cli_synth_twice_identical(tmp_path, capsys):
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({"n": 30, "D": 4, "F": 3, "seed": 1}))
    assert main(["synth", "--spec", str(spec), "--out", str(tmp_path / "a")]) == 0
    assert main(["synth", "--spec", str(spec), "--out", str(tmp_path / "b")]) == 0
    for name in ("image.csv", "clinical.csv", "labels.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert main(["synth", "--spec", str(spec), "--out", str(tmp_path / "c"), "--set", "n=2"]) == 1


def test_cli_ablate(tmp_path, capsys):
    path = _run_config(tmp_path, epochs=2)
    assert main(["ablate", "--axis", "loss_mode", "--config", str(path), "--repeats", "1",
                 "--out", str(tmp_path / "abl")]) == 0
    lines = (tmp_path / "abl" / "ablation_loss_mode.csv").read_text().splitlines()
    assert len(lines) == 4
