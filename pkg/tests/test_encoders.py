import numpy as np
import pytest

from cgmcl.diffcore import ParamStore, Tensor, finite_difference_check, ops
from cgmcl.encoders import (Affine, GatLayer, GcnLayer, ZetaMlp, encode_features, gat_attention,
                            gat_attention_logits, gat_forward, gcn_forward, zeta_forward)
from cgmcl.errors import ConfigError
from cgmcl.graphs import ModalGraph, gcn_normalize, knn_build, with_self_loops

from oracles import gat_logit


def _path3():
    A = np.zeros((3, 3), dtype=np.int8)
    A[0, 1] = A[1, 0] = A[1, 2] = A[2, 1] = 1
    return ModalGraph(A, 1)


def _gat(rng, f_in, f_out):
    return GatLayer(Tensor(rng.normal(size=(f_in, f_out))), Tensor(rng.normal(size=(2 * f_out, 1))))


def _random_graph(rng, n):
    A = (rng.random((n, n)) < 0.3).astype(np.int8)
    A = np.triu(A, 1)
    return ModalGraph(A + A.T, 0)


# -- feature encoder ---------------------------------------------------------------

def test_identity_encoder_is_tanh():
    raw = np.random.default_rng(0).uniform(-1, 1, size=(5, 3))
    enc = Affine(Tensor(np.eye(3)), Tensor(np.zeros((1, 3))))
    np.testing.assert_array_equal(encode_features(raw, enc).data, np.tanh(raw))


def test_zero_encoder_gives_zero_rows():
    raw = np.random.default_rng(1).normal(size=(4, 3))
    enc = Affine(Tensor(np.zeros((3, 2))), Tensor(np.zeros((1, 2))))
    assert (encode_features(raw, enc).data == 0).all()


def test_no_encoder_passes_through():
    raw = np.arange(6.0).reshape(2, 3)
    np.testing.assert_array_equal(encode_features(raw, None).data, raw)


def test_encoder_width_mismatch():
    enc = Affine(Tensor(np.zeros((3, 2))), Tensor(np.zeros((1, 2))))
    with pytest.raises(ConfigError):
        encode_features(np.zeros((2, 4)), enc)


def test_encoder_gradient():
    rng = np.random.default_rng(2)
    raw = rng.normal(size=(5, 3))
    s = ParamStore()
    Affine.init(s, "enc", 3, 4, rng)
    rep = finite_difference_check(lambda p: ops.total(encode_features(raw, Affine.bind(p, "enc"))), s)
    assert rep.max_rel_err < 1e-6


# -- GAT ---------------------------------------------------------------------------

def test_zero_attention_vector():
    rng = np.random.default_rng(3)
    layer = GatLayer(Tensor(rng.normal(size=(2, 3))), Tensor(np.zeros((6, 1))))
    L = gat_attention_logits(Tensor(rng.normal(size=(3, 2))), layer, _path3())
    mask = with_self_loops(_path3()).adjacency_hat.astype(bool)
    assert (L[mask] == 0).all()
    assert np.isneginf(L[~mask]).all()


def test_identical_features_identical_logits():
    rng = np.random.default_rng(4)
    X = np.tile(rng.normal(size=(1, 3)), (4, 1))
    L = gat_attention_logits(Tensor(X), _gat(rng, 3, 2), ModalGraph(np.ones((4, 4), np.int8) - np.eye(4, dtype=np.int8), 3))
    for row in L:
        assert np.unique(row).size == 1


def test_path_logits_match_hand_evaluation():
    rng = np.random.default_rng(5)
    X = rng.normal(size=(3, 2))
    layer = _gat(rng, 2, 3)
    L = gat_attention_logits(Tensor(X), layer, _path3())
    W = layer.W.data.tolist()
    a = layer.attn.data.reshape(-1).tolist()
    for i in range(3):
        for j in range(3):
            if abs(i - j) <= 1:
                assert L[i, j] == pytest.approx(gat_logit(X[i].tolist(), X[j].tolist(), W, a), abs=1e-12)
            else:
                assert L[i, j] == -np.inf


def test_single_node():
    rng = np.random.default_rng(6)
    x = rng.normal(size=(1, 3))
    layer = _gat(rng, 3, 2)
    H = gat_forward(Tensor(x), layer, ModalGraph(np.zeros((1, 1), np.int8), 0))
    np.testing.assert_allclose(H.data, np.tanh(x @ layer.W.data), rtol=0, atol=1e-15)


def test_uniform_logits_uniform_attention():
    rng = np.random.default_rng(7)
    layer = GatLayer(Tensor(rng.normal(size=(2, 2))), Tensor(np.zeros((4, 1))))
    alpha, _ = gat_attention(Tensor(rng.normal(size=(3, 2))), layer, _path3())
    np.testing.assert_allclose(alpha.data[1], [1 / 3] * 3, atol=1e-15)
    np.testing.assert_allclose(alpha.data[0], [0.5, 0.5, 0.0], atol=1e-15)


def test_attention_rows_normalized_random():
    rng = np.random.default_rng(8)
    for _ in range(20):
        n = int(rng.integers(2, 10))
        g = _random_graph(rng, n)
        alpha, _ = gat_attention(Tensor(rng.normal(size=(n, 3))), _gat(rng, 3, 4), g)
        mask = with_self_loops(g).adjacency_hat.astype(bool)
        np.testing.assert_allclose(alpha.data.sum(axis=1), 1.0, atol=1e-6)
        assert (alpha.data[~mask] == 0.0).all()


def test_permutation_equivariance():
    rng = np.random.default_rng(9)
    n = 7
    X = rng.normal(size=(n, 3))
    g = knn_build(X, 2)
    perm = rng.permutation(n)
    gp = ModalGraph(g.adjacency[np.ix_(perm, perm)], 2)
    gat, gcn = _gat(rng, 3, 4), GcnLayer(Tensor(rng.normal(size=(3, 4))))
    H = gat_forward(Tensor(X), gat, g).data
    Hp = gat_forward(Tensor(X[perm]), gat, gp).data
    np.testing.assert_allclose(Hp, H[perm], atol=1e-12)
    G = gcn_forward(Tensor(X), gcn, gcn_normalize(with_self_loops(g))).data
    Gp = gcn_forward(Tensor(X[perm]), gcn, gcn_normalize(with_self_loops(gp))).data
    np.testing.assert_allclose(Gp, G[perm], atol=1e-12)


def test_gat_gradient():
    rng = np.random.default_rng(10)
    X = rng.normal(size=(5, 3))
    g = knn_build(X, 2)
    s = ParamStore()
    GatLayer.init(s, "gat", 3, 4, rng)
    w = rng.normal(size=(5, 4))
    rep = finite_difference_check(
        lambda p: ops.total(ops.mul(gat_forward(Tensor(X), GatLayer.bind(p, "gat"), g), w)), s)
    assert rep.max_rel_err < 1e-4


# -- GCN ---------------------------------------------------------------------------

def test_gcn_identity_adjacency():
    rng = np.random.default_rng(11)
    X, W = rng.normal(size=(4, 3)), rng.normal(size=(3, 2))
    np.testing.assert_allclose(gcn_forward(Tensor(X), GcnLayer(Tensor(W)), np.eye(4)).data,
                               np.tanh(X @ W), atol=1e-15)


def test_gcn_two_node_symmetry():
    X = np.tile([[0.3, -1.2]], (2, 1))
    A = np.array([[0, 1], [1, 0]], dtype=np.int8)
    H = gcn_forward(Tensor(X), GcnLayer(Tensor(np.ones((2, 3)))), gcn_normalize(with_self_loops(ModalGraph(A, 1))))
    np.testing.assert_array_equal(H.data[0], H.data[1])


def test_gcn_gradient():
    rng = np.random.default_rng(12)
    X = rng.normal(size=(4, 3))
    norm = gcn_normalize(with_self_loops(knn_build(X, 1)))
    s = ParamStore()
    GcnLayer.init(s, "gcn", 3, 2, rng)
    w = rng.normal(size=(4, 2))
    rep = finite_difference_check(
        lambda p: ops.total(ops.mul(gcn_forward(Tensor(X), GcnLayer.bind(p, "gcn"), norm), w)), s)
    assert rep.max_rel_err < 1e-6


# -- gating MLP --------------------------------------------------------------------

def _zeta(f_in, width, fill=0.0, out_bias=0.0):
    z = lambda *shape: Tensor(np.full(shape, fill))
    return ZetaMlp(Affine(z(f_in, width), z(1, width)),
                   Affine(z(width, width), Tensor(np.full((1, width), out_bias))))


def test_zeta_zero_weights_half():
    out = zeta_forward(Tensor(np.random.default_rng(13).normal(size=(3, 5))), _zeta(5, 4))
    np.testing.assert_array_equal(out.data, np.full((3, 4), 0.5))


def test_zeta_saturates():
    out = zeta_forward(Tensor(np.ones((2, 3))), _zeta(3, 2, out_bias=50.0))
    assert (out.data > 1 - 1e-12).all()


def test_zeta_range_and_gradient():
    rng = np.random.default_rng(14)
    X = rng.normal(size=(6, 5)) * 3
    s = ParamStore()
    ZetaMlp.init(s, "z", 5, 4, rng)
    out = zeta_forward(Tensor(X), ZetaMlp.bind(s.constants(), "z"))
    assert ((out.data > 0) & (out.data < 1)).all()
    w = rng.normal(size=(6, 4))
    rep = finite_difference_check(
        lambda p: ops.total(ops.mul(zeta_forward(Tensor(X), ZetaMlp.bind(p, "z")), w)), s)
    assert rep.max_rel_err < 1e-6
