"""Forward-pass tests for the add-on module: mixture of experts, GCN topic
encoding, prediction heads, fusion, and both losses, each against an
independent straight-line oracle or hand value."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from taxoindex.addon import (
    AddonConfig,
    AddonError,
    ParameterSet,
    contrastive_loss,
    forward_text,
    fuse,
    gcn_adjacency,
    gcn_encode_topics,
    index_learning_loss,
    load_checkpoint,
    moe_forward,
    predict,
    save_checkpoint,
    softmax,
)
from taxoindex.taxonomy import TailoredTaxonomy, TaxonomyNode


def micro_config(dim=4, experts=2, topics=5, phrases=8, gcn_layers=2):
    return AddonConfig(dim=dim, num_topics=topics, num_phrases=phrases,
                       num_experts=experts, gcn_layers=gcn_layers)


def make_params(config, seed=0):
    return ParameterSet.initialize(config, seed=seed)


def chain_tailored(n):
    nodes = {f"t{i}": TaxonomyNode(f"t{i}", f"topic {i}",
                                   None if i == 0 else f"t{i-1}") for i in range(n)}
    for i in range(1, n):
        nodes[f"t{i-1}"].children.append(f"t{i}")
    return TailoredTaxonomy(nodes)


def oracle_moe(h_b, params, config):
    """Straight-line re-evaluation: h_task = sum_m w_m f_m(h_b)."""
    expert_outputs = []
    for m in range(config.num_experts):
        hidden = params[f"expert{m}.w1"] @ h_b + params[f"expert{m}.b1"]
        hidden = np.where(hidden > 0, hidden, 0.0)
        expert_outputs.append(params[f"expert{m}.w2"] @ hidden + params[f"expert{m}.b2"])
    zt = params["gate_topic.w"] @ h_b + params["gate_topic.b"]
    zp = params["gate_phrase.w"] @ h_b + params["gate_phrase.b"]
    wt = np.exp(zt) / np.exp(zt).sum()
    wp = np.exp(zp) / np.exp(zp).sum()
    h_t = sum(wt[m] * expert_outputs[m] for m in range(config.num_experts))
    h_p = sum(wp[m] * expert_outputs[m] for m in range(config.num_experts))
    return h_t, h_p, wt, wp


def oracle_fuse(h_b, h_t, h_p, params):
    """Straight-line re-evaluation of the fusion combination."""
    c = np.concatenate([h_t, h_p])
    v = params["fusion.w1"] @ c + params["fusion.b1"]
    r = np.where(v > 0, v, 0.0)
    h_i = params["fusion.w2"] @ r + params["fusion.b2"]
    w_d = 1.0 / (1.0 + math.exp(-(params["doc_weight.w"] @ h_b
                                  + params["doc_weight.b"][0])))
    return h_b + params["global_weight"][0] * w_d * h_i, h_i, w_d


class TestMoe:
    def test_single_expert_degenerate(self):
        config = micro_config(experts=1)
        params = make_params(config)
        h_b = np.array([0.3, -0.2, 0.5, 1.0])
        trace = moe_forward(h_b, params, config)
        assert trace.gate_topic == pytest.approx([1.0])
        hidden = np.maximum(params["expert0.w1"] @ h_b + params["expert0.b1"], 0)
        f1 = params["expert0.w2"] @ hidden + params["expert0.b2"]
        assert trace.topic_repr == pytest.approx(f1)
        assert trace.phrase_repr == pytest.approx(f1)

    def test_zero_gates_give_uniform_weights(self):
        config = micro_config(experts=3)
        params = make_params(config)
        params["gate_topic.w"] = np.zeros_like(params["gate_topic.w"])
        params["gate_topic.b"] = np.zeros_like(params["gate_topic.b"])
        trace = moe_forward(np.ones(4), params, config)
        assert trace.gate_topic == pytest.approx([1 / 3] * 3)

    def test_matches_oracle(self):
        config = micro_config(dim=4, experts=2)
        params = make_params(config, seed=5)
        h_b = np.random.default_rng(1).standard_normal(4)
        trace = moe_forward(h_b, params, config)
        h_t, h_p, wt, wp = oracle_moe(h_b, params, config)
        assert trace.topic_repr == pytest.approx(h_t, abs=1e-9)
        assert trace.phrase_repr == pytest.approx(h_p, abs=1e-9)
        assert trace.gate_topic == pytest.approx(wt, abs=1e-9)
        assert trace.gate_phrase == pytest.approx(wp, abs=1e-9)

    def test_gates_on_simplex(self):
        config = micro_config(experts=3)
        params = make_params(config, seed=2)
        trace = moe_forward(np.random.default_rng(0).standard_normal(4), params, config)
        for gate in (trace.gate_topic, trace.gate_phrase):
            assert gate.sum() == pytest.approx(1.0, abs=1e-9)
            assert np.all(gate >= 0)

    def test_uniform_gates_make_representations_equal(self):
        config = micro_config(experts=3)
        params = make_params(config, seed=2)
        for gate in ("gate_topic", "gate_phrase"):
            params[f"{gate}.w"] = np.zeros_like(params[f"{gate}.w"])
            params[f"{gate}.b"] = np.zeros_like(params[f"{gate}.b"])
        trace = moe_forward(np.random.default_rng(3).standard_normal(4), params, config)
        assert trace.topic_repr == pytest.approx(trace.phrase_repr)

    def test_non_finite_rejected(self):
        config = micro_config()
        params = make_params(config)
        with pytest.raises(AddonError, match="non-finite"):
            moe_forward(np.array([1.0, np.nan, 0.0, 0.0]), params, config)


class TestGcn:
    def test_single_node_identity_weights(self):
        config = micro_config(dim=3, gcn_layers=2)
        params = make_params(config)
        params["gcn0.w"] = np.eye(3)
        params["gcn1.w"] = np.eye(3)
        adj = np.array([[1.0]])  # one node with a self-loop, already normalized
        feats = np.array([[0.2, 0.0, 1.5]])
        trace = gcn_encode_topics(adj, feats, params, config)
        assert trace.output == pytest.approx(feats)

    def test_two_node_symmetry(self):
        config = micro_config(dim=3, gcn_layers=2)
        params = make_params(config)
        params["gcn0.w"] = np.eye(3)
        params["gcn1.w"] = np.eye(3)
        tailored = chain_tailored(2)
        adj = gcn_adjacency(tailored)
        shared = np.array([0.4, 0.1, 0.9])
        trace = gcn_encode_topics(adj, np.stack([shared, shared]), params, config)
        assert trace.output[0] == pytest.approx(shared)
        assert trace.output[1] == pytest.approx(shared)

    def test_path_graph_matches_dense_oracle(self):
        config = micro_config(dim=4, gcn_layers=2)
        params = make_params(config, seed=9)
        tailored = chain_tailored(3)
        adj = gcn_adjacency(tailored)
        # Oracle: build the normalization from the raw adjacency directly.
        raw = np.eye(3)
        raw[0, 1] = raw[1, 0] = 1.0
        raw[1, 2] = raw[2, 1] = 1.0
        d_inv_sqrt = np.diag(1.0 / np.sqrt(raw.sum(axis=1)))
        a_hat = d_inv_sqrt @ raw @ d_inv_sqrt
        assert adj == pytest.approx(a_hat, abs=1e-12)
        feats = np.random.default_rng(4).standard_normal((3, 4))
        x = feats
        for k in range(2):
            x = a_hat @ x @ params[f"gcn{k}.w"]
            if k < 1:
                x = np.maximum(x, 0.0)
        trace = gcn_encode_topics(adj, feats, params, config)
        assert trace.output == pytest.approx(x, abs=1e-9)

    def test_permutation_equivariance(self):
        config = micro_config(dim=4, gcn_layers=2)
        params = make_params(config, seed=7)
        tailored = chain_tailored(4)
        adj = gcn_adjacency(tailored)
        feats = np.random.default_rng(8).standard_normal((4, 4))
        base = gcn_encode_topics(adj, feats, params, config).output
        perm = np.array([2, 0, 3, 1])
        p_adj = adj[np.ix_(perm, perm)]
        permuted = gcn_encode_topics(p_adj, feats[perm], params, config).output
        assert permuted == pytest.approx(base[perm], abs=1e-12)

    def test_bad_feature_shape(self):
        config = micro_config(dim=4)
        params = make_params(config)
        with pytest.raises(AddonError):
            gcn_encode_topics(np.eye(2), np.ones((2, 3)), params, config)


class TestPredict:
    def test_zero_matrix_uniform(self):
        logits, probs = predict(np.ones(4), np.zeros((4, 4)))
        assert probs == pytest.approx([0.25] * 4)

    def test_hand_softmax(self):
        probs = softmax(np.array([math.log(3.0), 0.0]))
        assert probs == pytest.approx([0.75, 0.25], abs=1e-12)

    @given(st.integers(0, 1000))
    @settings(max_examples=25)
    def test_probabilities_sum_to_one(self, seed):
        rng = np.random.default_rng(seed)
        _, probs = predict(rng.standard_normal(4), rng.standard_normal((6, 4)) * 10)
        assert probs.sum() == pytest.approx(1.0, abs=1e-6)
        assert np.all(probs >= 0)

    def test_shape_mismatch(self):
        with pytest.raises(AddonError):
            predict(np.ones(3), np.zeros((4, 4)))


class TestIndexLoss:
    def test_one_hot_uniform(self):
        y = np.array([0.0, 1.0, 0.0, 0.0])
        uniform = np.full(4, 0.25)
        zero_phrase = np.zeros(2)
        loss = index_learning_loss(uniform, y, np.full(2, 0.5), zero_phrase)
        assert loss == pytest.approx(math.log(4), abs=1e-12)

    def test_perfect_prediction_loss_vanishes(self):
        y = np.array([0.0, 1.0])
        probs = np.array([1e-9, 1.0 - 1e-9])
        loss = index_learning_loss(probs, y, np.array([1.0]), np.array([0.0]))
        assert loss == pytest.approx(0.0, abs=1e-8)

    def test_multi_hot_counts_both(self):
        y = np.array([1.0, 1.0, 0.0, 0.0])
        uniform = np.full(4, 0.25)
        loss = index_learning_loss(uniform, y, np.array([1.0]), np.array([0.0]))
        assert loss == pytest.approx(2 * math.log(4), abs=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(AddonError):
            index_learning_loss(np.ones(3), np.ones(4), np.ones(2), np.ones(2))


class TestFuse:
    def test_zero_global_weight_passthrough(self):
        config = micro_config()
        params = make_params(config, seed=1)
        params["global_weight"] = np.array([0.0])
        h_b = np.random.default_rng(2).standard_normal(4)
        trace = fuse(h_b, np.ones(4), np.ones(4), params)
        assert trace.fused == pytest.approx(h_b, abs=0)

    def test_zero_head_gives_half_weight(self):
        config = micro_config()
        params = make_params(config, seed=1)
        trace = fuse(np.ones(4), np.ones(4), np.ones(4), params)
        assert trace.input_weight == pytest.approx(0.5)

    def test_matches_oracle(self):
        config = micro_config()
        params = make_params(config, seed=3)
        params["doc_weight.w"] = np.random.default_rng(5).standard_normal(4) * 0.3
        rng = np.random.default_rng(6)
        h_b, h_t, h_p = rng.standard_normal(4), rng.standard_normal(4), rng.standard_normal(4)
        trace = fuse(h_b, h_t, h_p, params)
        fused, h_i, w_d = oracle_fuse(h_b, h_t, h_p, params)
        assert trace.fused == pytest.approx(fused, abs=1e-9)
        assert trace.index_repr == pytest.approx(h_i, abs=1e-9)
        assert trace.input_weight == pytest.approx(w_d, abs=1e-9)
        assert 0.0 < trace.input_weight < 1.0


class TestContrastive:
    def test_equal_similarities(self):
        q = np.array([1.0, 0.0])
        loss, _ = contrastive_loss(q, np.array([0.5, 1.0]), [np.array([0.5, -1.0])])
        assert loss == pytest.approx(math.log(2), abs=1e-12)

    def test_wide_margin(self):
        q = np.array([1.0, 0.0])
        loss, _ = contrastive_loss(q, np.array([10.0, 0.0]), [np.array([0.0, 5.0])])
        assert loss == pytest.approx(math.log(1 + math.exp(-10)), abs=1e-12)

    def test_shift_invariance(self):
        rng = np.random.default_rng(0)
        q = rng.standard_normal(4)
        pos = rng.standard_normal(4)
        negs = [rng.standard_normal(4) for _ in range(3)]
        base, _ = contrastive_loss(q, pos, negs)
        # Adding a constant to every similarity = adding c*q/(|q|^2)... instead
        # verify via direct formula with shifted sims.
        sims = np.array([q @ pos] + [q @ n for n in negs]) + 123.4
        shifted = -sims[0] + np.log(np.exp(sims - sims.max()).sum()) + sims.max()
        assert shifted == pytest.approx(base, abs=1e-9)

    def test_requires_negatives(self):
        with pytest.raises(AddonError):
            contrastive_loss(np.ones(2), np.ones(2), [])


class TestForwardText:
    def test_trace_fields_consistent(self):
        config = micro_config(dim=4, experts=2, topics=5, phrases=8)
        params = make_params(config, seed=11)
        rng = np.random.default_rng(12)
        topic_classes = rng.standard_normal((5, 4))
        phrase_classes = rng.standard_normal((8, 4))
        trace = forward_text(rng.standard_normal(4), topic_classes, phrase_classes,
                             params, config)
        assert trace.topic_probs.sum() == pytest.approx(1.0, abs=1e-9)
        assert trace.phrase_probs.sum() == pytest.approx(1.0, abs=1e-9)
        assert trace.topic_logits == pytest.approx(topic_classes @ trace.topic_repr)
        assert trace.fused.shape == (4,)


class TestParameterSet:
    def test_default_budget_matches_published_size(self):
        config = AddonConfig(dim=768, num_topics=1164, num_phrases=3966)
        shapes = ParameterSet.tensor_shapes(config)
        total = sum(int(np.prod(s)) for s in shapes.values())
        assert abs(total - 7_380_000) / 7_380_000 <= 0.10

    def test_indexing_subset(self):
        config = micro_config()
        params = make_params(config)
        names = set(params.indexing_names())
        assert any(n.startswith("expert") for n in names)
        assert any(n.startswith("gcn") for n in names)
        assert not any(n.startswith(("fusion", "doc_weight", "global")) for n in names)

    def test_flatten_round_trip(self):
        config = micro_config()
        params = make_params(config, seed=4)
        flat = params.flatten()
        clone = make_params(config, seed=99)
        clone.load_flat(flat)
        for name in params.names():
            assert np.array_equal(clone[name], params[name])

    def test_checkpoint_round_trip(self, tmp_path):
        config = micro_config()
        params = make_params(config, seed=4)
        save_checkpoint(params, tmp_path / "ckpt", build_hash="abc123")
        loaded, build_hash = load_checkpoint(tmp_path / "ckpt")
        assert build_hash == "abc123"
        for name in params.names():
            assert np.array_equal(loaded[name],
                                  params[name].astype(np.float32).astype(np.float64))
        # Saving the loaded parameters reproduces identical bytes.
        save_checkpoint(loaded, tmp_path / "ckpt2")
        assert (tmp_path / "ckpt.bin").read_bytes() == (tmp_path / "ckpt2.bin").read_bytes()
