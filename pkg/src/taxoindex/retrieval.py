"""Inference: topic-overlap document filtering, fused-embedding search,
query expansion with predicted indicative phrases, and logit-based
explanations of why a document matched.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .addon import AddonConfig, ForwardTrace, ParameterSet, forward_text, gcn_encode_topics
from .concept_index import ForwardIndexRecord, PhraseCatalog
from .embeddings import EmbeddingProvider, text_key
from .lexical import Corpus, tokenize
from .taxonomy import TailoredTaxonomy
from .training import AddonInputs, LabelSpace

PREDICTION_TOP_K = 50


class RetrievalError(ValueError):
    """Raised for malformed retrieval requests or missing artifacts."""


@dataclass
class RetrievalConfig:
    retention_percent: float = 25.0
    top_k: int = 10
    expansion_k: int = 15
    expand: bool = False
    explain_topics: int = 10
    explain_phrases: int = 15

    def __post_init__(self):
        if not 0.0 < self.retention_percent <= 100.0:
            raise RetrievalError("retention_percent must lie in (0, 100]")


def topic_overlap(query_probs: np.ndarray, doc_probs: np.ndarray) -> float:
    """Inner product of two topic probability vectors."""
    if query_probs.shape != doc_probs.shape:
        raise RetrievalError(f"topic vectors differ in shape: "
                             f"{query_probs.shape} vs {doc_probs.shape}")
    return float(query_probs @ doc_probs)


def sparse_topic_overlap(query_probs: np.ndarray,
                         doc_topk: list[tuple[int, float]]) -> float:
    """Overlap against a top-k sparsified document prediction."""
    return float(sum(query_probs[idx] * p for idx, p in doc_topk))


def retention_count(n_docs: int, retention_percent: float) -> int:
    """Number of documents kept by the filter: ceil(x% of N)."""
    return math.ceil(retention_percent / 100.0 * n_docs)


def filter_corpus(query_probs: np.ndarray,
                  doc_predictions: dict[str, list[tuple[int, float]]],
                  retention_percent: float) -> list[str]:
    """Doc ids with the highest topic overlap, ceil(x% of N) of them,
    ties broken by ascending id."""
    keep = retention_count(len(doc_predictions), retention_percent)
    scored = sorted(((doc_id, sparse_topic_overlap(query_probs, topk))
                     for doc_id, topk in doc_predictions.items()),
                    key=lambda pair: (-pair[1], pair[0]))
    return [doc_id for doc_id, _ in scored[:keep]]


def sparsify_probs(probs: np.ndarray, top: int = PREDICTION_TOP_K) -> list[tuple[int, float]]:
    order = np.argsort(-probs, kind="stable")[:top]
    return [(int(i), float(probs[i])) for i in order]


@dataclass
class SearchEngine:
    """Immutable inference state: frozen parameters, fixed model inputs,
    the cached topic class matrix, and precomputed per-document artifacts."""

    corpus: Corpus
    records: dict[str, ForwardIndexRecord]
    tailored: TailoredTaxonomy
    catalog: PhraseCatalog
    space: LabelSpace
    params: ParameterSet
    addon_config: AddonConfig
    inputs: AddonInputs
    provider: EmbeddingProvider
    fused: dict[str, np.ndarray]
    doc_predictions: dict[str, list[tuple[int, float]]]
    topic_classes: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.topic_classes is None:
            trace = gcn_encode_topics(self.inputs.adjacency, self.inputs.topic_feats,
                                      self.params, self.addon_config)
            self.topic_classes = trace.output
        self._topic_by_index = {i: nid for nid, i in self.space.topic_index.items()}
        self._phrase_by_index = {i: pid for pid, i in self.space.phrase_index.items()}

    def forward(self, backbone: np.ndarray) -> ForwardTrace:
        return forward_text(backbone, self.topic_classes, self.inputs.phrase_classes,
                            self.params, self.addon_config)

    def embed_text(self, text: str, key: str | None = None) -> np.ndarray:
        return self.provider.vector(key or text_key(text), text=text)

    def topic_name(self, index: int) -> str:
        return self.tailored.name(self._topic_by_index[index])

    def phrase_surface(self, index: int) -> str:
        return self.catalog.surface_text(self._phrase_by_index[index])


def encode_corpus(corpus: Corpus, provider: EmbeddingProvider, params: ParameterSet,
                  addon_config: AddonConfig, inputs: AddonInputs,
                  top: int = PREDICTION_TOP_K,
                  ) -> tuple[dict[str, np.ndarray], dict[str, list[tuple[int, float]]]]:
    """Offline pass over the corpus: fused embeddings and top-k sparsified
    topic predictions for every document."""
    gcn = gcn_encode_topics(inputs.adjacency, inputs.topic_feats, params, addon_config)
    fused: dict[str, np.ndarray] = {}
    predictions: dict[str, list[tuple[int, float]]] = {}
    for doc in corpus:
        backbone = provider.vector(f"doc:{doc.id}", text=doc.body_text)
        trace = forward_text(backbone, gcn.output, inputs.phrase_classes,
                             params, addon_config)
        fused[doc.id] = trace.fused
        predictions[doc.id] = sparsify_probs(trace.topic_probs, top)
    return fused, predictions


def top_concepts(trace: ForwardTrace, engine: SearchEngine, n_topics: int,
                 n_phrases: int) -> dict:
    """Highest-logit topics and phrases for one text."""
    topic_order = np.argsort(-trace.topic_logits, kind="stable")[:n_topics]
    phrase_order = np.argsort(-trace.phrase_logits, kind="stable")[:n_phrases]
    return {
        "topics": [{"name": engine.topic_name(int(i)),
                    "logit": float(trace.topic_logits[i])} for i in topic_order],
        "phrases": [{"surface": engine.phrase_surface(int(i)),
                     "logit": float(trace.phrase_logits[i])} for i in phrase_order],
    }


def expand_query(query_text: str, engine: SearchEngine, k: int = 15) -> str:
    """Append the top-k predicted indicative phrases whose surface does not
    already occur in the query, separated by "; "."""
    backbone = engine.embed_text(query_text)
    trace = engine.forward(backbone)
    query_tokens = tokenize(query_text)
    added: list[str] = []
    for index in np.argsort(-trace.phrase_logits, kind="stable"):
        if len(added) == k:
            break
        pid = engine._phrase_by_index[int(index)]
        surface = engine.catalog.get(pid).surface
        if _contains_contiguous(query_tokens, surface):
            continue
        added.append(" ".join(surface))
    if not added:
        return query_text
    return query_text + "; " + "; ".join(added)


def _contains_contiguous(tokens: list[str], surface: tuple[str, ...]) -> bool:
    n = len(surface)
    return any(tuple(tokens[i:i + n]) == surface
               for i in range(len(tokens) - n + 1))


@dataclass
class RetrievalResult:
    query_text: str
    effective_query: str
    ranked: list[dict]
    query_concepts: dict
    doc_concepts: dict[str, dict]


def search(query_text: str, engine: SearchEngine,
           config: RetrievalConfig | None = None,
           query_key: str | None = None) -> RetrievalResult:
    """Embed the query, run it through the add-on, filter the corpus by
    topic overlap, rank the survivors by fused inner product, and attach
    concept explanations."""
    config = config or RetrievalConfig()
    effective_query = query_text
    if config.expand:
        effective_query = expand_query(query_text, engine, k=config.expansion_k)
    backbone = (engine.embed_text(effective_query)
                if config.expand or query_key is None
                else engine.embed_text(query_text, key=query_key))
    trace = engine.forward(backbone)
    candidates = filter_corpus(trace.topic_probs, engine.doc_predictions,
                               config.retention_percent)
    scored = []
    for doc_id in candidates:
        fused_doc = engine.fused[doc_id]
        doc = engine.corpus.get(doc_id)
        backbone_doc = engine.provider.vector(f"doc:{doc_id}", text=doc.body_text)
        scored.append({
            "doc_id": doc_id,
            "score": float(trace.fused @ fused_doc),
            "backbone_score": float(backbone @ backbone_doc),
            "topic_overlap": sparse_topic_overlap(trace.topic_probs,
                                                  engine.doc_predictions[doc_id]),
        })
    scored.sort(key=lambda row: (-row["score"], row["doc_id"]))
    ranked = scored[:config.top_k]
    query_concepts = top_concepts(trace, engine, config.explain_topics,
                                  config.explain_phrases)
    doc_concepts = {}
    for row in ranked:
        doc = engine.corpus.get(row["doc_id"])
        doc_backbone = engine.provider.vector(f"doc:{row['doc_id']}", text=doc.body_text)
        doc_trace = engine.forward(doc_backbone)
        concepts = top_concepts(doc_trace, engine, config.explain_topics,
                                config.explain_phrases)
        concepts["shared_topics"] = sorted(
            {t["name"] for t in concepts["topics"]}
            & {t["name"] for t in query_concepts["topics"]})
        concepts["shared_phrases"] = sorted(
            {p["surface"] for p in concepts["phrases"]}
            & {p["surface"] for p in query_concepts["phrases"]})
        doc_concepts[row["doc_id"]] = concepts
    return RetrievalResult(query_text=query_text, effective_query=effective_query,
                           ranked=ranked, query_concepts=query_concepts,
                           doc_concepts=doc_concepts)


def explain(query_text: str, doc_id: str, engine: SearchEngine,
            n_topics: int = 10, n_phrases: int = 15,
            query_key: str | None = None) -> dict:
    """Side-by-side concept view: the highest-logit topics and phrases for
    the query and for one document (documents use predictions, which also
    surface relevant classes the index never labeled), plus intersections."""
    if doc_id not in engine.corpus:
        raise RetrievalError(f"unknown document {doc_id!r}")
    q_trace = engine.forward(engine.embed_text(query_text, key=query_key))
    doc = engine.corpus.get(doc_id)
    d_trace = engine.forward(engine.provider.vector(f"doc:{doc_id}", text=doc.body_text))
    query_view = top_concepts(q_trace, engine, n_topics, n_phrases)
    doc_view = top_concepts(d_trace, engine, n_topics, n_phrases)
    return {
        "query": query_view,
        "doc": doc_view,
        "shared_topics": sorted({t["name"] for t in query_view["topics"]}
                                & {t["name"] for t in doc_view["topics"]}),
        "shared_phrases": sorted({p["surface"] for p in query_view["phrases"]}
                                 & {p["surface"] for p in doc_view["phrases"]}),
    }
