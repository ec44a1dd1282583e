"""Analytic gradients of the full training objective against central
finite differences on a micro configuration."""

import numpy as np
import pytest

from taxoindex.addon import AddonConfig, ParameterSet, gcn_adjacency
from taxoindex.taxonomy import TailoredTaxonomy, TaxonomyNode
from taxoindex.training import (
    AddonInputs,
    StepLosses,
    TextExample,
    TrainingPair,
    compute_batch_gradients,
)


def small_tailored(n=5):
    parents = [None, "t0", "t0", "t1", "t1"][:n]
    nodes = {f"t{i}": TaxonomyNode(f"t{i}", f"topic {i}", parents[i]) for i in range(n)}
    for i in range(1, n):
        nodes[parents[i]].children.append(f"t{i}")
    return TailoredTaxonomy(nodes)


def micro_problem(seed=0, num_pairs=2, dim=6, experts=2, topics=5, phrases=8):
    rng = np.random.default_rng(seed)
    config = AddonConfig(dim=dim, num_topics=topics, num_phrases=phrases,
                         num_experts=experts, gcn_layers=2)
    params = ParameterSet.initialize(config, seed=seed + 1)
    # Random gate/doc-weight tensors so no softmax/sigmoid sits at a
    # degenerate point.
    params["doc_weight.w"] = rng.standard_normal(dim) * 0.5
    tailored = small_tailored(topics)
    inputs = AddonInputs(adjacency=gcn_adjacency(tailored),
                         topic_feats=rng.standard_normal((topics, dim)),
                         phrase_classes=rng.standard_normal((phrases, dim)))

    def example(key):
        y_t = (rng.random(topics) < 0.4).astype(float)
        y_t[rng.integers(topics)] = 1.0
        y_p = (rng.random(phrases) < 0.3).astype(float)
        y_p[rng.integers(phrases)] = 1.0
        return TextExample(key=key, backbone=rng.standard_normal(dim),
                           topic_labels=y_t, phrase_labels=y_p)

    docs = {f"d{i}": example(f"d{i}") for i in range(5)}
    pairs = []
    negatives = {}
    for i in range(num_pairs):
        query = TextExample(key=f"q{i}", backbone=rng.standard_normal(dim),
                            topic_labels=rng.random(topics) * 0.6,
                            phrase_labels=rng.random(phrases) * 0.6)
        negs = [f"d{(i + 1) % 5}", f"d{(i + 2) % 5}"]
        pairs.append(TrainingPair(query_id=f"q{i}", positive=f"d{i}",
                                  negatives=negs, query=query))
        negatives[f"q{i}"] = negs
    return config, params, inputs, docs, pairs, negatives


def objective(params, config, inputs, docs, pairs, negatives, lam=0.1, **kw):
    losses, grads = compute_batch_gradients(params, config, inputs, docs, pairs,
                                            negatives, index_loss_weight=lam, **kw)
    return losses.total, grads


def finite_difference(loss_fn, params, eps=1e-5):
    flat = params.flatten()
    fd = np.zeros_like(flat)
    probe = params.copy()
    for i in range(flat.size):
        bumped = flat.copy()
        bumped[i] += eps
        probe.load_flat(bumped)
        up = loss_fn(probe)
        bumped[i] -= 2 * eps
        probe.load_flat(bumped)
        down = loss_fn(probe)
        fd[i] = (up - down) / (2 * eps)
    return fd


def max_relative_error(analytic, numeric, floor=1e-8):
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / scale))


def flatten_grads(params, grads):
    return np.concatenate([grads[name].ravel() for name in params.names()])


class TestFullObjectiveGradient:
    def test_joint_objective_matches_finite_differences(self):
        config, params, inputs, docs, pairs, negatives = micro_problem(seed=3)
        _, grads = objective(params, config, inputs, docs, pairs, negatives)
        analytic = flatten_grads(params, grads)
        fd = finite_difference(
            lambda p: objective(p, config, inputs, docs, pairs, negatives)[0], params)
        assert max_relative_error(analytic, fd) <= 1e-4

    def test_warmup_objective_matches_finite_differences(self):
        config, params, inputs, docs, pairs, negatives = micro_problem(seed=7)
        texts = list(docs.values())[:3]

        def run(p):
            losses, grads = compute_batch_gradients(
                p, config, inputs, {}, [], {}, index_loss_weight=1.0, il_texts=texts)
            return losses.total, grads

        _, grads = run(params)
        analytic = flatten_grads(params, grads)
        fd = finite_difference(lambda p: run(p)[0], params)
        assert max_relative_error(analytic, fd) <= 1e-4

    def test_pure_contrastive_matches_finite_differences(self):
        config, params, inputs, docs, pairs, negatives = micro_problem(seed=11)
        _, grads = objective(params, config, inputs, docs, pairs, negatives, lam=0.0)
        analytic = flatten_grads(params, grads)
        fd = finite_difference(
            lambda p: objective(p, config, inputs, docs, pairs, negatives, lam=0.0)[0],
            params)
        assert max_relative_error(analytic, fd) <= 1e-4


class TestDegeneratePaths:
    def test_fusion_grads_dead_under_pure_cl_with_zero_global_weight(self):
        config, params, inputs, docs, pairs, negatives = micro_problem(seed=5)
        params["global_weight"] = np.array([0.0])
        _, grads = objective(params, config, inputs, docs, pairs, negatives, lam=0.0)
        for name in ("fusion.w1", "fusion.b1", "fusion.w2", "fusion.b2",
                     "doc_weight.w", "doc_weight.b"):
            assert np.all(grads[name] == 0.0), name
        # The global weight itself still receives gradient at zero.
        assert grads["global_weight"][0] != 0.0

    def test_global_weight_grad_at_zero_matches_chain_rule(self):
        config, params, inputs, docs, pairs, negatives = micro_problem(seed=9)
        params["global_weight"] = np.array([0.0])
        _, grads = objective(params, config, inputs, docs, pairs, negatives, lam=0.0)
        eps = 1e-6
        probe = params.copy()
        probe["global_weight"] = np.array([eps])
        up, _ = objective(probe, config, inputs, docs, pairs, negatives, lam=0.0)
        probe["global_weight"] = np.array([-eps])
        down, _ = objective(probe, config, inputs, docs, pairs, negatives, lam=0.0)
        numeric = (up - down) / (2 * eps)
        assert grads["global_weight"][0] == pytest.approx(numeric, rel=1e-5, abs=1e-9)

    def test_gcn_grads_dead_under_pure_cl(self):
        config, params, inputs, docs, pairs, negatives = micro_problem(seed=13)
        _, grads = objective(params, config, inputs, docs, pairs, negatives, lam=0.0)
        assert np.all(grads["gcn0.w"] == 0.0)
        assert np.all(grads["gcn1.w"] == 0.0)
