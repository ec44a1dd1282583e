"""Training of the add-on module: core-topic-aware hard-negative mining,
query label construction, index-learning warmup, and the joint
contrastive + index-learning fine-tuning loop.

Loss normalization per step: the contrastive term is averaged over the
minibatch pairs, and each index-learning term is averaged over the unique
batch documents / batch queries it covers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .addon import (
    AddonConfig,
    ParameterSet,
    ce_logit_grad,
    contrastive_loss,
    forward_text,
    gcn_adjacency,
    gcn_backward,
    gcn_encode_topics,
    index_learning_loss,
    text_backward,
)
from .concept_index import ForwardIndexRecord, PhraseCatalog, topically_similar_docs
from .embeddings import EmbeddingProvider
from .lexical import Bm25Params, Corpus, CorpusStats, bm25_score, bm25_top_k
from .taxonomy import TailoredTaxonomy


class TrainingError(RuntimeError):
    """Raised for unusable training inputs or diverged optimization."""


@dataclass
class TrainConfig:
    index_loss_weight: float = 0.1
    learning_rate: float = 1e-4
    batch_size: int = 128
    weight_decay: float = 1e-4
    mined_negatives: int = 50
    negatives_per_step: int = 8
    warmup_tolerance: float = 1e-3
    warmup_max_epochs: int = 200
    epochs: int = 30
    seed: int = 0

    def __post_init__(self):
        if self.index_loss_weight < 0:
            raise ValueError("index_loss_weight must be nonnegative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")


@dataclass
class LabelSpace:
    """Dense class indices for topics (taxonomy order) and phrases
    (sorted catalog ids), shared by labels and class matrices."""

    topic_index: dict[str, int]
    phrase_index: dict[str, int]

    @classmethod
    def build(cls, tailored: TailoredTaxonomy, catalog: PhraseCatalog) -> "LabelSpace":
        return cls(topic_index=dict(tailored.node_index),
                   phrase_index={pid: i for i, pid in enumerate(sorted(catalog.phrases))})

    @property
    def num_topics(self) -> int:
        return len(self.topic_index)

    @property
    def num_phrases(self) -> int:
        return len(self.phrase_index)

    def label_vectors(self, record: ForwardIndexRecord) -> tuple[np.ndarray, np.ndarray]:
        y_t = np.zeros(self.num_topics)
        for nid in record.core_topics:
            y_t[self.topic_index[nid]] = 1.0
        y_p = np.zeros(self.num_phrases)
        for pid in record.phrase_ids():
            y_p[self.phrase_index[pid]] = 1.0
        return y_t, y_p


def topic_features(tailored: TailoredTaxonomy, provider: EmbeddingProvider) -> np.ndarray:
    """Fixed node features: the provider embedding of each topic name, in
    dense-index order."""
    rows = [None] * tailored.num_topics
    for nid, idx in tailored.node_index.items():
        rows[idx] = provider.vector(f"topic:{nid}", text=tailored.name(nid))
    return np.stack(rows)


def phrase_class_matrix(catalog: PhraseCatalog, provider: EmbeddingProvider,
                        space: LabelSpace) -> np.ndarray:
    """Fixed phrase class representations in label-space order."""
    rows = [None] * space.num_phrases
    for pid, idx in space.phrase_index.items():
        rows[idx] = provider.vector(f"phrase:{pid}", text=catalog.surface_text(pid))
    return np.stack(rows)


@dataclass
class AddonInputs:
    """Fixed (non-trainable) model inputs shared across steps."""

    adjacency: np.ndarray
    topic_feats: np.ndarray
    phrase_classes: np.ndarray

    @classmethod
    def build(cls, tailored: TailoredTaxonomy, catalog: PhraseCatalog,
              provider: EmbeddingProvider, space: LabelSpace) -> "AddonInputs":
        return cls(adjacency=gcn_adjacency(tailored),
                   topic_feats=topic_features(tailored, provider),
                   phrase_classes=phrase_class_matrix(catalog, provider, space))


@dataclass
class TextExample:
    """One text (document or query) with its backbone embedding and
    index labels."""

    key: str
    backbone: np.ndarray
    topic_labels: np.ndarray
    phrase_labels: np.ndarray


@dataclass
class TrainingPair:
    query_id: str
    positive: str
    negatives: list[str]
    query: TextExample

    def __post_init__(self):
        if self.positive in self.negatives:
            raise TrainingError(
                f"pair {self.query_id!r}: positive document listed as negative")


def mine_negatives(query_tokens: list[str], d_plus: str,
                   core_sets: dict[str, set[str]], corpus: Corpus,
                   stats: CorpusStats, relevant: set[str], n: int = 50,
                   similar_size: int = 100,
                   params: Bm25Params = Bm25Params()) -> list[str]:
    """Hard negatives for one (query, positive) pair: documents from the
    positive's topical neighborhood ordered by descending BM25 for the
    query, excluding the positive and everything relevant to the query;
    padded from the global BM25 ranking when the neighborhood is small."""
    if n < 1:
        raise ValueError("n must be at least 1")
    if d_plus not in core_sets:
        raise KeyError(f"positive document {d_plus!r} is not indexed")
    neighborhood = topically_similar_docs(d_plus, core_sets, size=similar_size)
    excluded = relevant | {d_plus}
    candidates = [d for d in neighborhood if d not in excluded]
    candidates.sort(key=lambda d: (-bm25_score(query_tokens, d, stats, params), d))
    negatives = candidates[:n]
    if len(negatives) < n:
        chosen = set(negatives)
        for doc_id, _ in bm25_top_k(query_tokens, corpus, stats, params, k=len(corpus)):
            if doc_id in excluded or doc_id in chosen:
                continue
            negatives.append(doc_id)
            chosen.add(doc_id)
            if len(negatives) == n:
                break
    return negatives


def query_labels(relevant_ids: list[str], records: dict[str, ForwardIndexRecord],
                 space: LabelSpace) -> tuple[np.ndarray, np.ndarray]:
    """Elementwise mean of the relevant documents' multi-hot label vectors."""
    if not relevant_ids:
        raise TrainingError("query has no relevant documents")
    topic_rows, phrase_rows = [], []
    for doc_id in relevant_ids:
        if doc_id not in records:
            raise KeyError(f"relevant document {doc_id!r} is not indexed")
        y_t, y_p = space.label_vectors(records[doc_id])
        topic_rows.append(y_t)
        phrase_rows.append(y_p)
    return np.mean(topic_rows, axis=0), np.mean(phrase_rows, axis=0)


class AdamW:
    """Adaptive-moment estimation with decoupled weight decay. Decay is
    applied to weight tensors only (names containing ".w"), never to
    biases or the global fusion weight."""

    def __init__(self, params: ParameterSet, learning_rate: float,
                 weight_decay: float, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = params.zeros_like()
        self.v = params.zeros_like()
        self.step_count = 0

    def step(self, params: ParameterSet, grads: dict[str, np.ndarray],
             names: list[str] | None = None) -> None:
        self.step_count += 1
        t = self.step_count
        for name in (names if names is not None else params.names()):
            g = grads[name]
            self.m[name] = self.beta1 * self.m[name] + (1 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1 - self.beta2) * g * g
            m_hat = self.m[name] / (1 - self.beta1 ** t)
            v_hat = self.v[name] / (1 - self.beta2 ** t)
            if ".w" in name:
                params[name] = params[name] * (1 - self.learning_rate * self.weight_decay)
            params[name] = params[name] - self.learning_rate * m_hat / (
                np.sqrt(v_hat) + self.eps)


@dataclass
class StepLosses:
    contrastive: float = 0.0
    index_docs: float = 0.0
    index_queries: float = 0.0

    @property
    def total(self) -> float:
        return self.contrastive + self.index_docs + self.index_queries


def compute_batch_gradients(params: ParameterSet, config: AddonConfig,
                            inputs: AddonInputs,
                            docs: dict[str, TextExample],
                            pairs: list[TrainingPair],
                            batch_negatives: dict[str, list[str]],
                            index_loss_weight: float,
                            include_contrastive: bool = True,
                            il_texts: list[TextExample] | None = None,
                            ) -> tuple[StepLosses, dict[str, np.ndarray]]:
    """One step's losses and analytic gradients.

    ``batch_negatives`` maps query_id to this step's sampled negatives.
    When ``il_texts`` is given (warmup), index learning runs over exactly
    those texts unweighted; otherwise it covers the batch docs and queries
    scaled by ``index_loss_weight``.
    """
    grads = params.zeros_like()
    gcn_trace = gcn_encode_topics(inputs.adjacency, inputs.topic_feats, params, config)
    topic_classes = gcn_trace.output
    d_topic_classes = np.zeros_like(topic_classes)
    losses = StepLosses()

    def fwd(example: TextExample):
        return forward_text(example.backbone, topic_classes, inputs.phrase_classes,
                            params, config)

    if il_texts is not None:
        scale = 1.0 / len(il_texts)
        for example in il_texts:
            trace = fwd(example)
            losses.index_docs += scale * index_learning_loss(
                trace.topic_probs, example.topic_labels,
                trace.phrase_probs, example.phrase_labels)
            text_backward(
                trace, params, config, grads,
                d_topic_logits=scale * ce_logit_grad(trace.topic_probs,
                                                     example.topic_labels),
                d_phrase_logits=scale * ce_logit_grad(trace.phrase_probs,
                                                      example.phrase_labels),
                topic_classes=topic_classes, phrase_classes=inputs.phrase_classes,
                d_topic_classes=d_topic_classes)
        gcn_backward(gcn_trace, inputs.adjacency, params, config,
                     d_topic_classes, grads)
        return losses, grads

    doc_keys = sorted({pair.positive for pair in pairs}
                      | {d for pair in pairs for d in batch_negatives[pair.query_id]})
    traces = {key: fwd(docs[key]) for key in doc_keys}
    query_traces = {pair.query_id: fwd(pair.query) for pair in pairs}
    d_fused: dict[str, np.ndarray] = {key: np.zeros(config.dim) for key in doc_keys}
    d_fused_q: dict[str, np.ndarray] = {pair.query_id: np.zeros(config.dim)
                                        for pair in pairs}

    if include_contrastive and pairs:
        pair_scale = 1.0 / len(pairs)
        for pair in pairs:
            negs = batch_negatives[pair.query_id]
            q = query_traces[pair.query_id].fused
            pos = traces[pair.positive].fused
            neg_vecs = [traces[d].fused for d in negs]
            loss, probs = contrastive_loss(q, pos, neg_vecs)
            losses.contrastive += pair_scale * loss
            d_fused_q[pair.query_id] += pair_scale * (
                (probs[0] - 1.0) * pos
                + sum(p * v for p, v in zip(probs[1:], neg_vecs)))
            d_fused[pair.positive] += pair_scale * (probs[0] - 1.0) * q
            for p, d in zip(probs[1:], negs):
                d_fused[d] += pair_scale * p * q

    il = index_loss_weight
    doc_scale = il / len(doc_keys) if doc_keys else 0.0
    for key in doc_keys:
        example, trace = docs[key], traces[key]
        if il > 0:
            losses.index_docs += doc_scale * index_learning_loss(
                trace.topic_probs, example.topic_labels,
                trace.phrase_probs, example.phrase_labels)
        text_backward(
            trace, params, config, grads,
            d_fused=d_fused[key],
            d_topic_logits=(doc_scale * ce_logit_grad(trace.topic_probs,
                                                      example.topic_labels)
                            if il > 0 else None),
            d_phrase_logits=(doc_scale * ce_logit_grad(trace.phrase_probs,
                                                       example.phrase_labels)
                             if il > 0 else None),
            topic_classes=topic_classes, phrase_classes=inputs.phrase_classes,
            d_topic_classes=d_topic_classes)
    query_scale = il / len(pairs) if pairs else 0.0
    for pair in pairs:
        trace = query_traces[pair.query_id]
        if il > 0:
            losses.index_queries += query_scale * index_learning_loss(
                trace.topic_probs, pair.query.topic_labels,
                trace.phrase_probs, pair.query.phrase_labels)
        text_backward(
            trace, params, config, grads,
            d_fused=d_fused_q[pair.query_id],
            d_topic_logits=(query_scale * ce_logit_grad(trace.topic_probs,
                                                        pair.query.topic_labels)
                            if il > 0 else None),
            d_phrase_logits=(query_scale * ce_logit_grad(trace.phrase_probs,
                                                         pair.query.phrase_labels)
                             if il > 0 else None),
            topic_classes=topic_classes, phrase_classes=inputs.phrase_classes,
            d_topic_classes=d_topic_classes)
    gcn_backward(gcn_trace, inputs.adjacency, params, config, d_topic_classes, grads)
    return losses, grads


def precision_at_k(probs: np.ndarray, labels: np.ndarray, k: int = 10) -> float:
    """Hits among the top-min(k, #labels) predictions over that same
    budget; 1.0 means every labeled class outranks every unlabeled one."""
    labeled = int(np.count_nonzero(labels))
    if labeled == 0:
        return 0.0
    budget = min(k, labeled)
    top = np.argsort(-probs, kind="stable")[:budget]
    hits = int(np.sum(labels[top] > 0))
    return hits / budget


def classification_precision(params: ParameterSet, config: AddonConfig,
                             inputs: AddonInputs, examples: list[TextExample],
                             k: int = 10) -> tuple[float, float]:
    """Mean topic / phrase precision@k of the indexing network."""
    gcn_trace = gcn_encode_topics(inputs.adjacency, inputs.topic_feats, params, config)
    topic_scores, phrase_scores = [], []
    for example in examples:
        trace = forward_text(example.backbone, gcn_trace.output,
                             inputs.phrase_classes, params, config)
        topic_scores.append(precision_at_k(trace.topic_probs, example.topic_labels, k))
        phrase_scores.append(precision_at_k(trace.phrase_probs, example.phrase_labels, k))
    return float(np.mean(topic_scores)), float(np.mean(phrase_scores))


def _check_finite(value: float, context: str) -> None:
    if not np.isfinite(value):
        raise TrainingError(f"non-finite loss during {context}; aborting")


@dataclass
class WarmupResult:
    epochs_run: int
    loss_history: list[float] = field(default_factory=list)
    topic_precision: float = 0.0
    phrase_precision: float = 0.0


def warmup(params: ParameterSet, config: AddonConfig, inputs: AddonInputs,
           texts: list[TextExample], train_config: TrainConfig,
           precision_texts: list[TextExample] | None = None) -> WarmupResult:
    """Index-learning warmup: only the indexing network (experts, gates,
    GCN) is updated, until the epoch-mean loss converges or the epoch
    budget runs out."""
    optimizer = AdamW(params, train_config.learning_rate, train_config.weight_decay)
    update_names = params.indexing_names()
    rng = np.random.default_rng(train_config.seed)
    result = WarmupResult(epochs_run=0)
    previous = None
    for epoch in range(train_config.warmup_max_epochs):
        order = rng.permutation(len(texts))
        epoch_loss = 0.0
        for start in range(0, len(texts), train_config.batch_size):
            batch = [texts[i] for i in order[start:start + train_config.batch_size]]
            losses, grads = compute_batch_gradients(
                params, config, inputs, {}, [], {}, index_loss_weight=1.0,
                il_texts=batch)
            _check_finite(losses.index_docs, f"warmup epoch {epoch}")
            optimizer.step(params, grads, names=update_names)
            epoch_loss += losses.index_docs * len(batch)
        epoch_loss /= len(texts)
        result.loss_history.append(epoch_loss)
        result.epochs_run = epoch + 1
        if previous is not None:
            denom = max(abs(previous), 1e-12)
            if abs(previous - epoch_loss) / denom < train_config.warmup_tolerance:
                break
        previous = epoch_loss
    eval_texts = precision_texts if precision_texts is not None else texts
    if eval_texts:
        result.topic_precision, result.phrase_precision = classification_precision(
            params, config, inputs, eval_texts)
    return result


@dataclass
class EpochLog:
    epoch: int
    contrastive: float
    index_docs: float
    index_queries: float
    topic_precision: float
    phrase_precision: float

    def as_dict(self) -> dict:
        return {"epoch": self.epoch, "L_CL": self.contrastive,
                "L_IL_docs": self.index_docs, "L_IL_queries": self.index_queries,
                "p_at_10_topic": self.topic_precision,
                "p_at_10_phrase": self.phrase_precision}


def train(params: ParameterSet, config: AddonConfig, inputs: AddonInputs,
          pairs: list[TrainingPair], docs: dict[str, TextExample],
          train_config: TrainConfig,
          checkpoint_fn=None) -> list[EpochLog]:
    """Joint fine-tuning: contrastive loss over fused embeddings with
    sampled mined negatives plus weighted index learning on batch
    documents and queries. Deterministic under a fixed seed."""
    if not pairs:
        raise TrainingError("no training pairs")
    optimizer = AdamW(params, train_config.learning_rate, train_config.weight_decay)
    rng = np.random.default_rng(train_config.seed)
    logs: list[EpochLog] = []
    doc_examples = list(docs.values())
    for epoch in range(train_config.epochs):
        order = rng.permutation(len(pairs))
        sums = StepLosses()
        steps = 0
        for start in range(0, len(pairs), train_config.batch_size):
            batch = [pairs[i] for i in order[start:start + train_config.batch_size]]
            batch_negatives = {}
            for pair in batch:
                k = min(train_config.negatives_per_step, len(pair.negatives))
                if k == 0:
                    raise TrainingError(f"pair {pair.query_id!r} has no negatives")
                picked = rng.choice(len(pair.negatives), size=k, replace=False)
                batch_negatives[pair.query_id] = [pair.negatives[i]
                                                  for i in sorted(picked)]
            losses, grads = compute_batch_gradients(
                params, config, inputs, docs, batch, batch_negatives,
                index_loss_weight=train_config.index_loss_weight)
            _check_finite(losses.total, f"epoch {epoch}")
            optimizer.step(params, grads)
            sums.contrastive += losses.contrastive
            sums.index_docs += losses.index_docs
            sums.index_queries += losses.index_queries
            steps += 1
        topic_p, phrase_p = classification_precision(params, config, inputs,
                                                     doc_examples)
        log = EpochLog(epoch=epoch, contrastive=sums.contrastive / steps,
                       index_docs=sums.index_docs / steps,
                       index_queries=sums.index_queries / steps,
                       topic_precision=topic_p, phrase_precision=phrase_p)
        logs.append(log)
        if checkpoint_fn is not None:
            checkpoint_fn(epoch, params, log)
    return logs
