"""GNN layers against dense numpy oracles, model-level gradient checks,
permutation equivariance, and checkpoint serialization."""
import numpy as np
import pytest

import hfgraph.autodiff as ad
from hfgraph.gnn import (
    AttentionDump,
    GatLayer,
    GnnModel,
    GraphContext,
    GtLayer,
    LayerConfig,
    NumericInstability,
    SageLayer,
    build_model,
    load_model,
    save_model,
)
from hfgraph.graph import SimilarityGraph
from hfgraph.train import LossConfig, masked_loss


def graph_from_edges(features, edges, labels=None):
    """Assemble a SimilarityGraph from an undirected edge list."""
    features = np.asarray(features, dtype=np.float64)
    n = features.shape[0]
    labels = np.zeros(n, dtype=np.int64) if labels is None else np.asarray(labels)
    adjacency = [[] for _ in range(n)]
    for u, v in edges:
        adjacency[u].append(v)
        adjacency[v].append(u)
    indptr = [0]
    indices = []
    for v in range(n):
        neigh = sorted(adjacency[v])
        indices.extend(neigh)
        indptr.append(len(indices))
    sims = np.zeros(len(indices))
    return SimilarityGraph(
        features=features,
        labels=labels,
        patient_ids=[f"p{i}" for i in range(n)],
        indptr=np.array(indptr),
        indices=np.array(indices),
        sims=sims,
        k=1,
    )


@pytest.fixture()
def small_graph(rng):
    features = rng.standard_normal((6, 3))
    edges = [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 0), (0, 3)]
    return graph_from_edges(features, edges, labels=[0, 1, 0, 1, 0, 1])


def in_neighbors_with_self(graph, dst):
    return sorted(set(graph.neighbors(dst).tolist()) | {dst})


def leaky(x, slope=0.2):
    return np.where(x > 0, x, slope * x)


# ---------------------------------------------------------------------------
# config validation


def test_layer_config_validation():
    with pytest.raises(ValueError, match="kind"):
        LayerConfig(kind="gcn", in_dim=4, out_dim=4).validate()
    with pytest.raises(ValueError, match="dimensions"):
        LayerConfig(kind="sage", in_dim=0, out_dim=4).validate()
    with pytest.raises(ValueError, match="activation"):
        LayerConfig(kind="sage", in_dim=4, out_dim=4, activation="tanh").validate()
    with pytest.raises(ValueError, match="heads"):
        LayerConfig(kind="gat", in_dim=4, out_dim=4, heads=0).validate()
    with pytest.raises(ValueError, match="divisible"):
        LayerConfig(kind="gt", in_dim=4, out_dim=6, heads=4).validate()
    LayerConfig(kind="gt", in_dim=4, out_dim=8, heads=4).validate()


def test_model_requires_chained_dims():
    configs = [
        LayerConfig(kind="sage", in_dim=4, out_dim=8),
        LayerConfig(kind="sage", in_dim=6, out_dim=2),
    ]
    with pytest.raises(ValueError, match="chain"):
        GnnModel(configs)
    with pytest.raises(ValueError, match="at least one"):
        GnnModel([])


def test_build_model_validation():
    with pytest.raises(ValueError, match="architecture"):
        build_model("mlp", in_dim=4)
    with pytest.raises(ValueError, match="n_layers"):
        build_model("sage", in_dim=4, n_layers=0)


def test_build_model_shapes():
    model = build_model("gat", in_dim=5, hidden_dim=8, n_layers=2, heads=2)
    assert [c.kind for c in model.configs] == ["gat", "gat"]
    assert model.configs[0].activation == "elu"
    assert (model.configs[0].in_dim, model.configs[0].out_dim) == (5, 8)
    assert model.configs[1].in_dim == 8
    sage = build_model("sage", in_dim=5, heads=4)
    assert sage.configs[0].heads == 1, "sage ignores the heads knob"


def test_forward_rejects_feature_dim_mismatch(small_graph):
    model = build_model("sage", in_dim=7, hidden_dim=4, use_batchnorm=False)
    with pytest.raises(ValueError, match="in_dim"):
        model.forward(small_graph.features, GraphContext(small_graph))


# ---------------------------------------------------------------------------
# SAGE against the written-out formula


def test_sage_matches_hand_formula(small_graph, rng):
    config = LayerConfig(kind="sage", in_dim=3, out_dim=4, activation="relu")
    layer = SageLayer(config, rng)
    h = small_graph.features
    out, dump = layer.forward(ad.constant(h), GraphContext(small_graph), training=False)
    assert dump is None

    n = small_graph.n
    mean = np.zeros_like(h)
    for v in range(n):
        mean[v] = h[small_graph.neighbors(v)].mean(axis=0)
    expected = np.hstack([h, mean]) @ layer.W.data + layer.b.data
    np.testing.assert_allclose(out.data, np.maximum(expected, 0.0), atol=1e-12)


def test_sage_isolated_node_uses_zero_mean(rng):
    features = rng.standard_normal((3, 2))
    graph = graph_from_edges(features, [(0, 1)])  # node 2 isolated
    config = LayerConfig(kind="sage", in_dim=2, out_dim=3, activation="none")
    layer = SageLayer(config, rng)
    out, _ = layer.forward(ad.constant(features), GraphContext(graph), training=False)
    expected = np.hstack([features[2], np.zeros(2)]) @ layer.W.data + layer.b.data
    np.testing.assert_allclose(out.data[2], expected[0], atol=1e-12)


# ---------------------------------------------------------------------------
# GAT against a dense softmax oracle


def dense_gat_head(graph, h, W, a_s, a_d):
    wh = h @ W
    n = graph.n
    out = np.zeros((n, wh.shape[1]))
    for dst in range(n):
        sources = in_neighbors_with_self(graph, dst)
        logits = np.array(
            [float(wh[s] @ a_s + wh[dst] @ a_d) for s in sources]
        )
        logits = leaky(logits)
        z = np.exp(logits - logits.max())
        alpha = z / z.sum()
        out[dst] = sum(a * wh[s] for a, s in zip(alpha, sources))
    return out


def test_gat_matches_dense_oracle(small_graph, rng):
    config = LayerConfig(kind="gat", in_dim=3, out_dim=4, heads=2, activation="none")
    layer = GatLayer(config, rng)
    h = small_graph.features
    out, _ = layer.forward(ad.constant(h), GraphContext(small_graph), training=False)
    expected = np.hstack(
        [
            dense_gat_head(
                small_graph, h, layer.W[i].data, layer.a_src[i].data[:, 0], layer.a_dst[i].data[:, 0]
            )
            for i in range(2)
        ]
    )
    np.testing.assert_allclose(out.data, expected, rtol=1e-12, atol=1e-12)


# ---------------------------------------------------------------------------
# GT against a dense scaled-dot-product oracle


def dense_gt_head(graph, h, W_Q, W_K, W_V):
    q, k, v = h @ W_Q, h @ W_K, h @ W_V
    scale = 1.0 / np.sqrt(W_Q.shape[1])
    n = graph.n
    out = np.zeros((n, v.shape[1]))
    alpha_dense = np.zeros((n, n))
    for dst in range(n):
        sources = in_neighbors_with_self(graph, dst)
        logits = np.array([float(q[dst] @ k[s]) * scale for s in sources])
        z = np.exp(logits - logits.max())
        alpha = z / z.sum()
        for a, s in zip(alpha, sources):
            alpha_dense[dst, s] = a
            out[dst] += a * v[s]
    return out, alpha_dense


def test_gt_matches_dense_oracle(small_graph, rng):
    config = LayerConfig(kind="gt", in_dim=3, out_dim=4, heads=2, activation="none")
    layer = GtLayer(config, rng)
    h = small_graph.features
    out, dump = layer.forward(ad.constant(h), GraphContext(small_graph), training=False)

    heads = []
    alphas = []
    for i in range(2):
        head_out, alpha = dense_gt_head(
            small_graph, h, layer.W_Q[i].data, layer.W_K[i].data, layer.W_V[i].data
        )
        heads.append(head_out)
        alphas.append(alpha)
    expected = np.hstack(heads) @ layer.W_O.data + h @ layer.W_R.data
    np.testing.assert_allclose(out.data, expected, rtol=1e-12, atol=1e-12)

    # The exported attention entries are exactly the dense softmax weights.
    for s, t, head, w in zip(dump.source, dump.target, dump.head, dump.weight):
        assert w == pytest.approx(alphas[head][t, s], abs=1e-12)


def test_gt_attention_sums_to_one_per_target_and_head(tiny_graph):
    model = build_model("gt", in_dim=tiny_graph.dim, hidden_dim=8, heads=4, seed=3)
    _, dump = model.predict(tiny_graph)
    sums = dump.sums_by_target_head(tiny_graph.n, 4)
    np.testing.assert_allclose(sums, 1.0, atol=1e-9)


def test_attention_layers_handle_isolated_nodes(rng):
    features = rng.standard_normal((4, 3))
    graph = graph_from_edges(features, [(0, 1)])  # nodes 2, 3 isolated
    for arch in ("gat", "gt"):
        model = build_model(arch, in_dim=3, hidden_dim=4, heads=2, seed=0,
                            use_batchnorm=False)
        probs, dump = model.predict(graph)
        assert np.all(np.isfinite(probs))
    # Isolated nodes attend only to themselves.
    self_w = dump.weight[(dump.source == 2) & (dump.target == 2)]
    np.testing.assert_allclose(self_w, 1.0, atol=1e-12)


# ---------------------------------------------------------------------------
# permutation equivariance


@pytest.mark.parametrize("arch", ["sage", "gat", "gt"])
def test_forward_is_permutation_equivariant(arch, rng):
    features = rng.standard_normal((7, 4))
    edges = [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 6), (6, 0), (1, 4)]
    graph = graph_from_edges(features, edges)

    perm = rng.permutation(7)  # new node i is old node perm[i]
    inv = np.argsort(perm)
    perm_edges = [(int(inv[u]), int(inv[v])) for u, v in edges]
    perm_graph = graph_from_edges(features[perm], perm_edges)

    kwargs = dict(in_dim=4, hidden_dim=6, heads=2, seed=12, use_batchnorm=False)
    p1, _ = build_model(arch, **kwargs).predict(graph)
    p2, _ = build_model(arch, **kwargs).predict(perm_graph)
    np.testing.assert_allclose(p2, p1[perm], rtol=1e-9, atol=1e-12)


# ---------------------------------------------------------------------------
# batchnorm plumbing


def test_batchnorm_switches_between_batch_and_running_stats(small_graph):
    model = build_model("sage", in_dim=3, hidden_dim=4, seed=0, use_batchnorm=True)
    ctx = GraphContext(small_graph)
    before = [b.copy() for _, b in model.named_buffers()]
    out_train, _ = model.forward(small_graph.features, ctx, training=True)
    after = [b.copy() for _, b in model.named_buffers()]
    assert any(not np.array_equal(a, b) for a, b in zip(before, after)), (
        "training forward must update running statistics"
    )
    out_eval, _ = model.forward(small_graph.features, ctx, training=False)
    assert not np.allclose(out_train.data, out_eval.data)


# ---------------------------------------------------------------------------
# whole-model gradient checks


def model_loss_value(model, graph, ctx, mask):
    p, _ = model.forward(graph.features, ctx, training=True)
    return masked_loss(p, graph.labels, mask, LossConfig(kind="bce")).item()


@pytest.mark.parametrize("arch", ["sage", "gat", "gt"])
def test_model_gradients_match_finite_differences(arch, rng):
    features = rng.standard_normal((8, 3))
    edges = [(0, 1), (1, 2), (2, 3), (3, 0), (4, 5), (5, 6), (6, 7), (7, 4), (0, 4)]
    labels = np.array([0, 1, 0, 1, 1, 0, 1, 0])
    graph = graph_from_edges(features, edges, labels=labels)
    mask = np.ones(8, dtype=bool)
    ctx = GraphContext(graph)
    model = build_model(arch, in_dim=3, hidden_dim=4, n_layers=2, heads=2, seed=2)

    with ad.Tape() as tape:
        p, _ = model.forward(graph.features, ctx, training=True)
        loss = masked_loss(p, graph.labels, mask, LossConfig(kind="bce"))
        tape.backward(loss)
    analytic = {name: t.grad.copy() for name, t in model.named_parameters()}

    h = 1e-5
    for name, t in model.named_parameters():
        numeric = np.zeros_like(t.data)
        flat_param = t.data.reshape(-1)
        flat_grad = numeric.reshape(-1)
        for i in range(flat_param.size):
            original = flat_param[i]
            flat_param[i] = original + h
            up = model_loss_value(model, graph, ctx, mask)
            flat_param[i] = original - h
            down = model_loss_value(model, graph, ctx, mask)
            flat_param[i] = original
            flat_grad[i] = (up - down) / (2.0 * h)
        err = np.abs(analytic[name] - numeric).max()
        scale = max(1.0, np.abs(numeric).max())
        assert err / scale < 1e-5, f"{arch} {name}: rel err {err / scale:.2e}"


# ---------------------------------------------------------------------------
# numeric guards and prediction surface


def test_forward_raises_on_overflow(small_graph):
    model = build_model("gat", in_dim=3, hidden_dim=4, heads=2, use_batchnorm=False)
    model.layers[0].W[0].data[:] = np.inf
    with pytest.raises(NumericInstability, match="layer"), np.errstate(all="ignore"):
        model.forward(small_graph.features, GraphContext(small_graph))


def test_forward_raises_on_non_finite_head(small_graph):
    model = build_model("sage", in_dim=3, hidden_dim=4, use_batchnorm=False)
    model.head_W.data[:] = np.inf
    with pytest.raises(NumericInstability, match="head"), np.errstate(all="ignore"):
        model.forward(small_graph.features, GraphContext(small_graph))


def test_predict_surface(tiny_graph):
    model = build_model("sage", in_dim=tiny_graph.dim, hidden_dim=8, seed=1)
    probs, dump = model.predict(tiny_graph)
    assert probs.shape == (tiny_graph.n,)
    assert np.all((probs > 0.0) & (probs < 1.0))
    assert dump is None, "sage exposes no attention"
    gt = build_model("gt", in_dim=tiny_graph.dim, hidden_dim=8, heads=2, seed=1)
    _, dump = gt.predict(tiny_graph)
    assert isinstance(dump, AttentionDump)


# ---------------------------------------------------------------------------
# AttentionDump utilities


def fabricated_dump():
    return AttentionDump(
        source=np.array([0, 1, 0, 1]),
        target=np.array([1, 1, 1, 1]),
        head=np.array([0, 0, 1, 1]),
        weight=np.array([0.2, 0.8, 0.4, 0.6]),
    )


def test_dump_without_self_loops():
    out = fabricated_dump().without_self_loops()
    assert out.source.tolist() == [0, 0]
    np.testing.assert_allclose(out.weight, [0.2, 0.4])


def test_dump_mean_over_heads():
    out = fabricated_dump().mean_over_heads()
    entries = {
        (int(s), int(t)): w for s, t, w in zip(out.source, out.target, out.weight)
    }
    assert entries == {(0, 1): pytest.approx(0.3), (1, 1): pytest.approx(0.7)}
    assert np.all(out.head == 0)


def test_dump_sums_by_target_head():
    sums = fabricated_dump().sums_by_target_head(n=2, n_heads=2)
    np.testing.assert_allclose(sums, [[0.0, 0.0], [1.0, 1.0]])


def test_dump_csv_roundtrip(tmp_path):
    dump = fabricated_dump()
    path = tmp_path / "attention.csv"
    dump.save_csv(path)
    back = AttentionDump.load_csv(path)
    np.testing.assert_array_equal(back.source, dump.source)
    np.testing.assert_array_equal(back.target, dump.target)
    np.testing.assert_array_equal(back.head, dump.head)
    np.testing.assert_array_equal(back.weight, dump.weight)


def test_dump_csv_rejects_bad_header(tmp_path):
    path = tmp_path / "attention.csv"
    path.write_text("a,b,c\n", encoding="utf-8")
    with pytest.raises(ValueError, match="header"):
        AttentionDump.load_csv(path)


# ---------------------------------------------------------------------------
# checkpointing


@pytest.mark.parametrize("arch", ["sage", "gat", "gt"])
def test_checkpoint_roundtrip(arch, tmp_path, small_graph):
    model = build_model(
        arch, in_dim=3, hidden_dim=4, heads=2, seed=5, threshold=0.4
    )
    # A training-mode pass perturbs the batchnorm running buffers so the
    # round trip covers non-default buffer state.
    model.forward(small_graph.features, GraphContext(small_graph), training=True)
    probs_before, _ = model.predict(small_graph)

    path = tmp_path / "model.ckpt"
    save_model(path, model)
    loaded = load_model(path)
    assert loaded.threshold == 0.4
    assert [c.as_dict() for c in loaded.configs] == [c.as_dict() for c in model.configs]
    probs_after, _ = loaded.predict(small_graph)
    np.testing.assert_array_equal(probs_after, probs_before)


def test_checkpoint_rejects_wrong_magic(tmp_path):
    path = tmp_path / "bad.ckpt"
    path.write_bytes(b"not a checkpoint\n{}\n")
    with pytest.raises(ValueError, match="magic"):
        load_model(path)


def test_checkpoint_rejects_truncation(tmp_path, small_graph):
    model = build_model("sage", in_dim=3, hidden_dim=4)
    path = tmp_path / "model.ckpt"
    save_model(path, model)
    data = path.read_bytes()
    path.write_bytes(data[:-16])
    with pytest.raises(ValueError, match="truncated"):
        load_model(path)


def test_snapshot_restore_roundtrip(small_graph):
    model = build_model("gt", in_dim=3, hidden_dim=4, heads=2, seed=1)
    state = model.snapshot()
    probs_before, _ = model.predict(small_graph)
    for t in model.parameters():
        t.data = t.data + 1.0
    probs_mutated, _ = model.predict(small_graph)
    assert not np.allclose(probs_before, probs_mutated)
    model.restore(state)
    probs_restored, _ = model.predict(small_graph)
    np.testing.assert_array_equal(probs_restored, probs_before)
