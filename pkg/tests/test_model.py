import math

import numpy as np
import pytest

from egatsym.autodiff import Tensor
from egatsym.graph import build_graph, random_graph
from egatsym.model import (
    ModelConfig, ModelParams, cosine, forward, layer_norm, load_checkpoint, pair_loss, pair_similarity,
    save_checkpoint,
)
from egatsym.netlist import parse_netlist

from oracles import SYMMETRIC_OTA, dense_egat, permute_graph

SMALL = ModelConfig(layers=2, heads=2, d_n=8, d_e=8)


def params_for(cfg, seed=0):
    return ModelParams.init(ModelConfig(**{**cfg.__dict__, "seed": seed}))


def test_default_hyperparameters():
    cfg = ModelConfig()
    assert (cfg.layers, cfg.heads, cfg.d_n, cfg.similarity_threshold) == (3, 5, 80, 0.6)


@pytest.mark.parametrize("bad", [dict(heads=3), dict(layers=0), dict(d_e=40), dict(similarity_threshold=1.0)])
def test_config_validation(bad):
    with pytest.raises(ValueError):
        ModelConfig(**bad)


def test_layer_norm_examples():
    one, zero = Tensor(np.ones(2)), Tensor(np.zeros(2))
    out = layer_norm(Tensor([[1.0, -1.0]]), one, zero).data
    np.testing.assert_allclose(out, [[1 / math.sqrt(1 + 1e-5), -1 / math.sqrt(1 + 1e-5)]], rtol=1e-15)
    beta = Tensor([0.3, -0.7])
    np.testing.assert_allclose(layer_norm(Tensor([[4.0, 4.0]]), one, beta).data, [[0.3, -0.7]])


def test_pair_loss_examples():
    assert pair_loss(0.0, 1) == pytest.approx(math.log(2), abs=1e-12)
    assert pair_loss(1.0, 1) == pytest.approx(0.31326168751822286, abs=1e-12)
    assert pair_loss(1.0, -1) == pytest.approx(1.3132616875182228, abs=1e-12)
    with pytest.raises(ValueError):
        pair_loss(0.5, 0)


def test_cosine_examples():
    x = Tensor([[1.0, 0.0], [1.0, 1.0], [0.0, 2.0], [1.0, 0.0], [0.0, 0.0]])
    sims = cosine(x, np.array([0, 0, 0]), np.array([1, 2, 3])).data
    np.testing.assert_allclose(sims, [1 / math.sqrt(2), 0.0, 1.0], atol=1e-15)
    with pytest.raises(FloatingPointError):
        cosine(x, np.array([0]), np.array([4]))


@pytest.mark.parametrize("variant", [dict(), dict(gate_feature=False), dict(edge_features=False),
                                     dict(layers=3, heads=5, d_n=10, d_e=10)])
def test_matches_dense_oracle(variant):
    cfg = ModelConfig(**{**SMALL.__dict__, **variant})
    rng = np.random.default_rng(11)
    for k in range(5):
        g = random_graph(rng, int(rng.integers(2, 11)))
        params = params_for(cfg, k)
        tr = forward(g, params)
        P = {name: t.data for name, t in params.tensors.items()}
        nodes, scores = dense_egat(g.node_x, g.edge_x, g.src, g.dst, P, cfg)
        np.testing.assert_allclose(tr.nodes.data, nodes, rtol=0, atol=1e-10)
        for layer, s in enumerate(scores):
            np.testing.assert_allclose(tr.scores[layer].data, s[g.dst, g.src], rtol=0, atol=1e-12)


def test_single_neighbour_scores_one():
    g = random_graph(np.random.default_rng(0), 2)
    tr = forward(g, params_for(SMALL))
    np.testing.assert_allclose(tr.scores[0].data, 1.0, atol=1e-15)


def test_single_node_graph():
    g = random_graph(np.random.default_rng(0), 1)
    tr = forward(g, params_for(SMALL))
    assert tr.nodes.shape == (1, 8)
    assert tr.scores[0].shape == (0, 2)


def test_zero_output_layer_gives_bias():
    params = params_for(ModelConfig(layers=1, heads=2, d_n=8, d_e=8))
    params["l0.mlp_n.W2"].data[:] = 0.0
    params["l0.mlp_n.b2"].data[:] = np.arange(8.0)
    out = forward(random_graph(np.random.default_rng(2), 5), params).nodes.data
    np.testing.assert_array_equal(out, np.tile(np.arange(8.0), (5, 1)))


def test_permutation_equivariance():
    rng = np.random.default_rng(5)
    params = params_for(ModelConfig())
    for _ in range(3):
        g = random_graph(rng, 9)
        perm = rng.permutation(g.n_nodes)
        a = forward(g, params).nodes.data
        b = forward(permute_graph(g, perm), params).nodes.data
        np.testing.assert_allclose(b[perm], a, rtol=0, atol=1e-10)


def test_automorphic_pairs_score_one():
    g = build_graph(parse_netlist(SYMMETRIC_OTA))
    tr = forward(g, params_for(ModelConfig(), 3))
    for a, b in [("M1", "M2"), ("M3", "M4")]:
        assert abs(pair_similarity(tr, g.index(a), g.index(b)) - 1.0) <= 1e-9


def test_checkpoint_round_trip(tmp_path):
    from egatsym.graph import SizeStats
    params = params_for(SMALL, 4)
    stats = SizeStats(lo={0: [1.0, 2.0]}, hi={0: [3.0, 4.0]})
    path = tmp_path / "m.npz"
    save_checkpoint(path, params, stats, {"note": "x"})
    loaded, st2, extra = load_checkpoint(path, expect=params.config)
    assert st2 == stats and extra == {"note": "x"}
    for name, t in params.tensors.items():
        assert np.array_equal(loaded[name].data, t.data)
    with pytest.raises(ValueError):
        load_checkpoint(path, expect=ModelConfig())
