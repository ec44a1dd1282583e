"""Concept-aware academic search: taxonomy-guided semantic indexing over a
frozen dense retriever, with index-learning fine-tuning of a small add-on
module and concept-level result explanations."""

from .addon import AddonConfig, ParameterSet, load_checkpoint, save_checkpoint
from .concept_index import (
    ForwardIndexRecord,
    IndexBuildConfig,
    LlmClient,
    LlmClientConfig,
    PhraseCatalog,
    build_forward_index,
    mine_phrase_candidates,
)
from .embeddings import (
    EmbeddingTable,
    SyntheticEmbeddingProvider,
    TableEmbeddingProvider,
    load_embeddings,
    save_embeddings,
    synth_embed,
)
from .evalkit import Qrels, RunFile, evaluate_run, map_at_k, ndcg_at_k, recall_at_k
from .lexical import (
    Bm25Params,
    Corpus,
    CorpusStats,
    Document,
    bm25_score,
    bm25_top_k,
    jaccard,
    load_corpus,
    tokenize,
)
from .retrieval import (
    RetrievalConfig,
    SearchEngine,
    encode_corpus,
    expand_query,
    explain,
    filter_corpus,
    search,
    topic_overlap,
)
from .taxonomy import (
    Taxonomy,
    candidate_topics,
    doc_topic_similarity,
    load_taxonomy,
    score_filter,
    subtree_nodes,
    tailor_taxonomy,
)
from .training import TrainConfig, mine_negatives, query_labels, train, warmup

__version__ = "0.1.0"
