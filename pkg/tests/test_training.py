"""Tests for negative mining, query labels, warmup, and the training loop."""

import numpy as np
import pytest

from taxoindex.addon import AddonConfig, ParameterSet
from taxoindex.concept_index import ForwardIndexRecord, Phrase, PhraseCatalog
from taxoindex.lexical import Bm25Params, Corpus, CorpusStats, Document, tokenize
from taxoindex.taxonomy import TailoredTaxonomy, TaxonomyNode
from taxoindex.training import (
    AddonInputs,
    AdamW,
    LabelSpace,
    TextExample,
    TrainConfig,
    TrainingError,
    TrainingPair,
    mine_negatives,
    query_labels,
    train,
    warmup,
)
from test_gradients import micro_problem, small_tailored


def make_corpus(texts: dict[str, str]) -> Corpus:
    return Corpus([Document(id=i, title=t, abstract="") for i, t in texts.items()])


class TestMineNegatives:
    def test_hand_ranked_fixture(self):
        corpus = make_corpus({
            "dplus": "query words target",
            "B": "query query words",
            "C": "query other stuff",
            "D": "unrelated entirely here",
        })
        stats = CorpusStats.from_corpus(corpus)
        # B and C share topics with the positive; D does not.
        core = {"dplus": {"t1"}, "B": {"t1"}, "C": {"t1"}, "D": {"t9"}}
        query = tokenize("query query words")
        negs = mine_negatives(query, "dplus", core, corpus, stats,
                              relevant={"dplus"}, n=2, similar_size=2)
        assert negs == ["B", "C"]

    def test_two_doc_corpus_saturates(self):
        corpus = make_corpus({"dplus": "alpha beta", "other": "alpha gamma"})
        stats = CorpusStats.from_corpus(corpus)
        core = {"dplus": {"t"}, "other": {"t"}}
        negs = mine_negatives(["alpha"], "dplus", core, corpus, stats,
                              relevant={"dplus"}, n=50)
        assert negs == ["other"]

    def test_relevant_docs_excluded(self):
        corpus = make_corpus({f"d{i}": f"token{i} shared" for i in range(6)})
        stats = CorpusStats.from_corpus(corpus)
        core = {d: {"t"} for d in corpus.ids()}
        relevant = {"d0", "d2", "d4"}
        negs = mine_negatives(["shared"], "d0", core, corpus, stats,
                              relevant=relevant, n=10)
        assert set(negs) == {"d1", "d3", "d5"}
        assert not set(negs) & relevant

    def test_padding_from_global_ranking(self):
        corpus = make_corpus({
            "dplus": "alpha", "near": "alpha", "far1": "beta", "far2": "beta gamma",
        })
        stats = CorpusStats.from_corpus(corpus)
        # The positive's topical neighborhood has only one candidate.
        core = {"dplus": {"t"}, "near": {"t"}, "far1": {"x"}, "far2": {"y"}}
        negs = mine_negatives(["beta"], "dplus", core, corpus, stats,
                              relevant={"dplus"}, n=3, similar_size=1)
        assert negs[0] == "near"
        assert set(negs) == {"near", "far1", "far2"}

    def test_unknown_positive(self):
        corpus = make_corpus({"a": "x"})
        stats = CorpusStats.from_corpus(corpus)
        with pytest.raises(KeyError):
            mine_negatives(["x"], "ghost", {"a": {"t"}}, corpus, stats, set())


class TestQueryLabels:
    def space(self):
        tailored = small_tailored(3)
        catalog = PhraseCatalog({"p0": Phrase(("a",), 1.0), "p1": Phrase(("b",), 1.0)})
        return LabelSpace.build(tailored, catalog)

    def test_single_relevant_doc(self):
        space = self.space()
        records = {"d1": ForwardIndexRecord("d1", {"t1"}, [("p0", 0.5)])}
        y_t, y_p = query_labels(["d1"], records, space)
        expected_t, expected_p = space.label_vectors(records["d1"])
        assert np.array_equal(y_t, expected_t)
        assert np.array_equal(y_p, expected_p)

    def test_disjoint_topics_average_to_half(self):
        space = self.space()
        records = {"d1": ForwardIndexRecord("d1", {"t1"}, []),
                   "d2": ForwardIndexRecord("d2", {"t2"}, [])}
        y_t, _ = query_labels(["d1", "d2"], records, space)
        assert y_t[space.topic_index["t1"]] == 0.5
        assert y_t[space.topic_index["t2"]] == 0.5

    def test_shared_topic_stays_one(self):
        space = self.space()
        records = {"d1": ForwardIndexRecord("d1", {"t1"}, []),
                   "d2": ForwardIndexRecord("d2", {"t1"}, [])}
        y_t, _ = query_labels(["d1", "d2"], records, space)
        assert y_t[space.topic_index["t1"]] == 1.0

    def test_no_relevant_docs(self):
        with pytest.raises(TrainingError):
            query_labels([], {}, self.space())


class TestWarmup:
    def test_zero_epoch_budget_is_noop(self):
        config, params, inputs, docs, _, _ = micro_problem(seed=1)
        before = params.flatten()
        result = warmup(params, config, inputs, list(docs.values()),
                        TrainConfig(warmup_max_epochs=0))
        assert result.epochs_run == 0
        assert np.array_equal(params.flatten(), before)

    def test_only_indexing_parameters_move(self):
        config, params, inputs, docs, _, _ = micro_problem(seed=2)
        fusion_before = {n: params[n].copy() for n in params.names()
                         if n.startswith(("fusion", "doc_weight", "global"))}
        warmup(params, config, inputs, list(docs.values()),
               TrainConfig(warmup_max_epochs=3, learning_rate=1e-2))
        for name, tensor in fusion_before.items():
            assert np.array_equal(params[name], tensor), name

    def test_index_loss_weight_does_not_affect_trajectory(self):
        histories = []
        for lam in (0.1, 1.0):
            config, params, inputs, docs, _, _ = micro_problem(seed=3)
            cfg = TrainConfig(warmup_max_epochs=4, learning_rate=1e-2,
                              index_loss_weight=lam)
            result = warmup(params, config, inputs, list(docs.values()), cfg)
            histories.append(result.loss_history)
        assert histories[0] == histories[1]

    def test_loss_decreases_and_converges(self):
        config, params, inputs, docs, _, _ = micro_problem(seed=4)
        cfg = TrainConfig(warmup_max_epochs=300, learning_rate=5e-2,
                          warmup_tolerance=1e-4)
        result = warmup(params, config, inputs, list(docs.values()), cfg)
        assert result.loss_history[-1] < result.loss_history[0]
        assert result.epochs_run < 300  # hit the convergence criterion


class TestTrain:
    def run_training(self, seed=0, epochs=3, lam=0.1):
        config, params, inputs, docs, pairs, _ = micro_problem(seed=5)
        cfg = TrainConfig(epochs=epochs, batch_size=2, learning_rate=1e-3,
                          negatives_per_step=2, seed=seed, index_loss_weight=lam)
        logs = train(params, config, inputs, pairs, docs, cfg)
        return params, logs

    def test_deterministic_under_fixed_seed(self):
        params_a, logs_a = self.run_training(seed=7)
        params_b, logs_b = self.run_training(seed=7)
        assert np.array_equal(params_a.flatten(), params_b.flatten())
        assert [l.as_dict() for l in logs_a] == [l.as_dict() for l in logs_b]

    def test_zero_weight_reduces_to_pure_contrastive(self):
        _, logs = self.run_training(lam=0.0)
        for log in logs:
            assert log.index_docs == 0.0
            assert log.index_queries == 0.0
            assert log.contrastive > 0.0

    def test_epoch_log_schema(self):
        _, logs = self.run_training(epochs=2)
        entry = logs[0].as_dict()
        assert set(entry) == {"epoch", "L_CL", "L_IL_docs", "L_IL_queries",
                              "p_at_10_topic", "p_at_10_phrase"}

    @pytest.mark.filterwarnings("ignore:overflow", "ignore:invalid value")
    def test_divergence_aborts(self):
        config, params, inputs, docs, pairs, _ = micro_problem(seed=6)
        params["global_weight"] = np.array([1e200])
        cfg = TrainConfig(epochs=1, batch_size=2, negatives_per_step=2)
        with pytest.raises(TrainingError, match="non-finite"):
            train(params, config, inputs, pairs, docs, cfg)

    def test_positive_never_in_negatives(self):
        query = TextExample("q", np.zeros(4), np.zeros(2), np.zeros(2))
        with pytest.raises(TrainingError):
            TrainingPair(query_id="q", positive="d1", negatives=["d1", "d2"],
                         query=query)

    def test_backbone_embeddings_unchanged(self):
        config, params, inputs, docs, pairs, _ = micro_problem(seed=8)
        before = {k: ex.backbone.copy() for k, ex in docs.items()}
        cfg = TrainConfig(epochs=2, batch_size=2, negatives_per_step=2)
        train(params, config, inputs, pairs, docs, cfg)
        for key, ex in docs.items():
            assert np.array_equal(ex.backbone, before[key])


class TestAdamW:
    def test_decay_applies_to_weights_only(self):
        config = AddonConfig(dim=4, num_topics=3, num_phrases=3, num_experts=1)
        params = ParameterSet.initialize(config, seed=0)
        opt = AdamW(params, learning_rate=0.1, weight_decay=0.5)
        grads = params.zeros_like()
        w_before = params["expert0.w1"].copy()
        b_before = params["expert0.b1"].copy()
        alpha_before = params["global_weight"].copy()
        opt.step(params, grads)
        assert np.allclose(params["expert0.w1"], w_before * (1 - 0.1 * 0.5))
        assert np.array_equal(params["expert0.b1"], b_before)
        assert np.array_equal(params["global_weight"], alpha_before)
