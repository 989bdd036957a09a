import numpy as np
import pytest

from graphmae.autodiff import Tensor
from graphmae.errors import ValidationError
from graphmae.graph import CsrAdjacency, FeatureSpec, Graph, generate_sbm
from graphmae.layers import (
    GraphContext,
    Layer,
    LayerConfig,
    Model,
    decode,
    decoder_configs,
    encode,
    encoder_configs,
)

from conftest import DENSE_LAYERS, dense_forward, random_adjacency, randomize_parameters


def _layer(kind, d_in, d_out, seed=0, **kw):
    return Layer(LayerConfig(kind, d_in, d_out, **kw), f"t.{kind}", np.random.default_rng(seed))


def _graph(adj, d=1, x=None):
    x = np.zeros((adj.n, d)) if x is None else np.asarray(x, dtype=float)
    return Graph(adj, x)


def _set(layer, name, value):
    layer.params[name].data = np.array(value, dtype=float).reshape(layer.params[name].shape)


def _identity_gin(d=1, eps=0.0):
    layer = _layer("gin", d, d, activation="identity")
    _set(layer, "mlp0.weight", np.eye(d))
    _set(layer, "mlp1.weight", np.eye(d))
    _set(layer, "mlp_slope", np.ones(d))
    _set(layer, "eps", eps)
    return layer


# --------------------------------------------------------------------- GCN


def test_gcn_single_node_identity():
    layer = _layer("gcn", 2, 2, activation="identity")
    _set(layer, "weight", np.eye(2))
    g = _graph(CsrAdjacency.empty(1), x=[[1.5, -2.0]])
    assert np.array_equal(layer(Tensor(g.features), GraphContext(g)).data, g.features)


def test_gcn_path_example():
    layer = _layer("gcn", 1, 1, activation="identity")
    _set(layer, "weight", [[1.0]])
    g = _graph(CsrAdjacency.from_arcs(2, [0], [1], symmetrize=True), x=[[1.0], [3.0]])
    out = layer(Tensor(g.features), GraphContext(g)).data
    assert np.allclose(out, [[2.0], [2.0]], atol=1e-15, rtol=0)


# --------------------------------------------------------------------- GAT


def test_gat_zero_attention_is_mean_aggregation(rng):
    adj = random_adjacency(rng, 10, 0.3)
    g = _graph(adj, x=rng.normal(size=(10, 3)))
    layer = _layer("gat", 3, 4, activation="identity")
    wh = g.features @ layer.params["head0.weight"].data
    mask = adj.to_dense() != 0
    np.fill_diagonal(mask, True)
    expect = (mask / mask.sum(1, keepdims=True)) @ wh
    out = layer(Tensor(g.features), GraphContext(g)).data
    assert np.max(np.abs(out - expect)) < 1e-12
    assert all(np.allclose(a, np.repeat(1 / mask.sum(1), mask.sum(1)))
               for a in layer.attention(Tensor(g.features), GraphContext(g)))


def test_gat_single_node_attention_one(rng):
    layer = _layer("gat", 3, 2, heads=2)
    randomize_parameters(layer.params.values(), rng)
    g = _graph(CsrAdjacency.empty(1), x=rng.normal(size=(1, 3)))
    ctx = GraphContext(g)
    assert [a.tolist() for a in layer.attention(Tensor(g.features), ctx)] == [[1.0], [1.0]]
    wh = np.concatenate([g.features @ layer.params[f"head{k}.weight"].data for k in range(2)], axis=1)
    slope = layer.params["act_slope"].data
    expect = np.where(wh > 0, wh, slope * wh)
    assert np.allclose(layer(Tensor(g.features), ctx).data, expect, atol=1e-15, rtol=0)


@pytest.mark.parametrize("concat", [True, False])
def test_gat_two_heads_matches_dense(rng, concat):
    adj = random_adjacency(rng, 15, 0.25)
    g = _graph(adj, x=rng.normal(size=(15, 4)))
    layer = _layer("gat", 4, 3, heads=2, concat=concat)
    randomize_parameters(layer.params.values(), rng, scale=1.0)
    out = layer(Tensor(g.features), GraphContext(g)).data
    assert out.shape == (15, 6 if concat else 3)
    ref = DENSE_LAYERS["gat"](layer, g.features, adj.to_dense())
    assert np.max(np.abs(out - ref)) < 1e-10


def test_gat_ignores_existing_self_loop_duplicates(rng):
    adj = random_adjacency(rng, 8, 0.3)
    looped = random_adjacency(np.random.default_rng(0), 8, 0.0, loops=True)
    both = CsrAdjacency.from_arcs(8, np.concatenate([adj.arc_rows(), looped.arc_rows()]),
                                  np.concatenate([adj.col_indices, looped.col_indices]))
    x = rng.normal(size=(8, 2))
    layer = _layer("gat", 2, 2)
    randomize_parameters(layer.params.values(), rng)
    a = layer(Tensor(x), GraphContext(_graph(adj, x=x))).data
    b = layer(Tensor(x), GraphContext(_graph(both, x=x))).data
    assert np.array_equal(a, b)


# --------------------------------------------------------------------- GIN


def test_gin_isolated_node_identity():
    layer = _identity_gin()
    g = _graph(CsrAdjacency.empty(1), x=[[2.5]])
    assert layer(Tensor(g.features), GraphContext(g)).data.tolist() == [[2.5]]


def test_gin_star_center():
    layer = _identity_gin()
    adj = CsrAdjacency.from_arcs(4, [0, 0, 0], [1, 2, 3], symmetrize=True)
    g = _graph(adj, x=[[0.0], [1.0], [2.0], [3.0]])
    out = layer(Tensor(g.features), GraphContext(g)).data
    assert out[0].tolist() == [6.0]


def test_gin_eps_minus_one_cancels_self():
    layer = _identity_gin(d=2, eps=-1.0)
    g = _graph(CsrAdjacency.empty(2), x=[[3.0, -1.0], [2.0, 7.0]])
    assert np.array_equal(layer(Tensor(g.features), GraphContext(g)).data, np.zeros((2, 2)))


def test_gin_fixed_eps(rng):
    layer = _layer("gin", 2, 2, learn_eps=False)
    assert "eps" not in layer.params
    g = _graph(random_adjacency(rng, 6, 0.4), x=rng.normal(size=(6, 2)))
    ref = DENSE_LAYERS["gin"](layer, g.features, g.adjacency.to_dense())
    assert np.max(np.abs(layer(Tensor(g.features), GraphContext(g)).data - ref)) < 1e-12


def test_gin_ignores_edge_values(rng):
    adj = random_adjacency(rng, 8, 0.4, weighted=True)
    unit = adj.with_values(np.ones(adj.num_arcs))
    x = rng.normal(size=(8, 3))
    layer = _layer("gin", 3, 2)
    randomize_parameters(layer.params.values(), rng)
    a = layer(Tensor(x), GraphContext(_graph(adj, x=x))).data
    b = layer(Tensor(x), GraphContext(_graph(unit, x=x))).data
    assert np.array_equal(a, b)


# ------------------------------------------------------ dense-oracle sweeps


@pytest.mark.parametrize("kind", ["gcn", "gat", "gin", "mlp"])
@pytest.mark.parametrize("seed", range(4))
def test_layers_match_dense(kind, seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 30))
    adj = random_adjacency(rng, n, rng.uniform(0.05, 0.5))
    x = rng.normal(size=(n, 5))
    layer = _layer(kind, 5, 4, heads=2 if kind == "gat" else 1, seed=seed)
    randomize_parameters(layer.params.values(), rng, scale=1.0)
    out = layer(Tensor(x), GraphContext(_graph(adj, x=x))).data
    ref = DENSE_LAYERS[kind](layer, x, adj.to_dense())
    assert np.max(np.abs(out - ref)) < 1e-10


def test_dim_mismatch_is_validation_error(rng):
    g = _graph(CsrAdjacency.empty(3), x=np.zeros((3, 2)))
    for kind in ("gcn", "gat", "gin", "mlp"):
        with pytest.raises(ValidationError):
            _layer(kind, 3, 2)(Tensor(g.features), GraphContext(g))


def test_layer_config_validation():
    with pytest.raises(ValidationError):
        LayerConfig("sage", 2, 2)
    with pytest.raises(ValidationError):
        LayerConfig("gcn", 0, 2)
    with pytest.raises(ValidationError):
        LayerConfig("gin", 2, 2, heads=2)
    with pytest.raises(ValidationError):
        LayerConfig("gat", 2, 2, activation="tanh")
    assert LayerConfig("gat", 4, 3, heads=2).output_dim == 6
    assert LayerConfig("gat", 4, 3, heads=2, concat=False).output_dim == 3


# ------------------------------------------------------------------ models


def test_zero_layer_model_is_identity(rng):
    g = _graph(CsrAdjacency.empty(3), x=rng.normal(size=(3, 2)))
    x = Tensor(g.features)
    assert encode(Model([], "encoder"), g, x) is x


def test_encode_is_deterministic(sbm12):
    m = Model(encoder_configs("gat", 5, 8, heads=2), "encoder", seed=3)
    a = encode(m, sbm12, Tensor(sbm12.features)).data
    b = encode(m, sbm12, Tensor(sbm12.features)).data
    assert np.array_equal(a, b)


def test_encode_matches_layer_composition(sbm12, rng):
    m = Model(encoder_configs("gat", 5, 8, heads=2), "encoder", seed=3)
    randomize_parameters(m.parameters(), rng)
    ctx = GraphContext(sbm12)
    out = encode(m, ctx, Tensor(sbm12.features)).data
    h = Tensor(sbm12.features)
    for layer in m.layers:
        h = layer(h, ctx)
    assert np.array_equal(out, h.data)
    assert np.max(np.abs(out - dense_forward(m, sbm12.features, sbm12.adjacency.to_dense()))) < 1e-10


def test_mlp_decoder_ignores_adjacency(rng):
    g = generate_sbm([5, 5], 0.5, 0.1, FeatureSpec(dim=3), seed=1)
    other = g.replace(adjacency=random_adjacency(rng, 10, 0.6))
    dec = Model(decoder_configs("mlp", 4, 3), "decoder", seed=0)
    h = Tensor(rng.normal(size=(10, 4)))
    assert np.array_equal(decode(dec, g, h).data, decode(dec, other, h).data)


def test_gat_decoder_single_node(rng):
    dec = Model(decoder_configs("gat", 4, 3), "decoder", seed=0)
    randomize_parameters(dec.parameters(), rng)
    g = _graph(CsrAdjacency.empty(1), x=np.zeros((1, 3)))
    h = rng.normal(size=(1, 4))
    w = dec.layers[0].params["head0.weight"].data
    assert np.allclose(decode(dec, g, Tensor(h)).data, h @ w, atol=1e-15, rtol=0)


def test_gin_decoder_matches_dense(rng):
    adj = random_adjacency(rng, 10, 0.3)
    g = _graph(adj, x=np.zeros((10, 3)))
    dec = Model(decoder_configs("gin", 4, 3), "decoder", seed=0)
    randomize_parameters(dec.parameters(), rng)
    h = rng.normal(size=(10, 4))
    ref = dense_forward(dec, h, adj.to_dense())
    assert np.max(np.abs(decode(dec, g, Tensor(h)).data - ref)) < 1e-10


def test_role_checks(sbm12):
    enc = Model(encoder_configs("gcn", 5, 4), "encoder")
    with pytest.raises(ValidationError):
        decode(enc, sbm12, Tensor(sbm12.features))
    with pytest.raises(ValidationError):
        Model([], "critic")


def test_model_dim_chain_validated():
    with pytest.raises(ValidationError, match="does not feed"):
        Model([LayerConfig("gcn", 3, 4), LayerConfig("gcn", 5, 2)], "encoder")


def test_encoder_configs_split_hidden_across_heads():
    cfgs = encoder_configs("gat", 10, 64, num_layers=2, heads=4)
    assert [c.out_dim for c in cfgs] == [16, 16]
    assert all(c.output_dim == 64 for c in cfgs)
    with pytest.raises(ValidationError, match="divisible"):
        encoder_configs("gat", 10, 30, heads=4)
    dec = decoder_configs("gat", 64, 10)
    assert dec[0].activation == "identity" and not dec[0].concat


def test_architecture_roundtrip():
    m = Model(encoder_configs("gin", 7, 6), "encoder", seed=5)
    back = Model.from_architecture(m.architecture(), seed=5)
    assert back.architecture() == m.architecture()
    assert [p.name for p in back.parameters()] == [p.name for p in m.parameters()]
    assert all(np.array_equal(a.data, b.data) for a, b in zip(m.parameters(), back.parameters()))
