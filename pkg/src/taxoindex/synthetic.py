"""Self-contained synthetic benchmark: a planted-topic corpus with a small
taxonomy, topic-specific vocabularies, and train/test queries phrased in
held-out synonym tokens that never appear in documents.

The construction makes surface matching weak (queries share only generic
tokens with documents) while concept matching is learnable (training
queries teach the add-on which topics and phrases the synonym vocabulary
stands for), which is exactly the regime the add-on is meant to win in.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .addon import AddonConfig, ParameterSet
from .concept_index import (
    IndexBuildConfig,
    Phrase,
    PhraseCatalog,
    build_forward_index,
    mine_phrase_candidates,
)
from .embeddings import SyntheticEmbeddingProvider
from .evalkit import ndcg_at_k
from .lexical import Corpus, CorpusStats, Document, tokenize
from .retrieval import RetrievalConfig, SearchEngine, encode_corpus, search
from .taxonomy import Taxonomy, TaxonomyNode
from .training import (
    AddonInputs,
    LabelSpace,
    TextExample,
    TrainConfig,
    TrainingPair,
    mine_negatives,
    query_labels,
    train,
    warmup,
)

_CONSONANTS = "bcdfgklmnprstvz"
_VOWELS = "aeiou"


def _word_pool(rng: np.random.Generator, count: int) -> list[str]:
    """Distinct pronounceable pseudo-words."""
    words: list[str] = []
    seen: set[str] = set()
    while len(words) < count:
        syllables = rng.integers(2, 4)
        word = "".join(_CONSONANTS[rng.integers(len(_CONSONANTS))]
                       + _VOWELS[rng.integers(len(_VOWELS))]
                       for _ in range(syllables))
        if word not in seen:
            seen.add(word)
            words.append(word)
    return words


@dataclass
class SyntheticSpec:
    num_branches: int = 4
    leaves_per_branch: int = 5
    docs_per_topic: int = 15
    core_vocab: int = 4          # shared by every doc of a topic (2 name the topic)
    marker_vocab: int = 10       # rare per-doc tokens; each doc samples a couple
    markers_per_doc: int = 2
    synonym_vocab: int = 4
    generic_vocab: int = 30
    train_queries_per_topic: int = 3
    test_queries_per_topic: int = 2
    embed_dim: int = 64
    seed: int = 7

    @property
    def num_topics(self) -> int:
        return self.num_branches * self.leaves_per_branch

    @property
    def num_docs(self) -> int:
        return self.num_topics * self.docs_per_topic


@dataclass
class SyntheticWorld:
    spec: SyntheticSpec
    corpus: Corpus
    taxonomy: Taxonomy
    catalog: PhraseCatalog
    train_queries: dict[str, str]
    test_queries: dict[str, str]
    train_qrels: dict[str, dict[str, int]]
    test_qrels: dict[str, dict[str, int]]
    doc_topic: dict[str, str] = field(default_factory=dict)


def generate_world(spec: SyntheticSpec | None = None) -> SyntheticWorld:
    spec = spec or SyntheticSpec()
    rng = np.random.default_rng(spec.seed)
    n_topics = spec.num_topics
    per_topic = spec.core_vocab + spec.marker_vocab + spec.synonym_vocab
    pool = _word_pool(rng, n_topics * per_topic + spec.num_branches
                      + spec.generic_vocab)
    cursor = 0

    def take(n):
        nonlocal cursor
        out = pool[cursor:cursor + n]
        cursor += n
        return out

    core_words = {t: take(spec.core_vocab) for t in range(n_topics)}
    marker_words = {t: take(spec.marker_vocab) for t in range(n_topics)}
    synonyms = {t: take(spec.synonym_vocab) for t in range(n_topics)}
    branch_words = take(spec.num_branches)
    generic = take(spec.generic_vocab)

    nodes = {"root": TaxonomyNode("root", "science", None)}
    for b in range(spec.num_branches):
        bid = f"branch{b}"
        nodes[bid] = TaxonomyNode(bid, branch_words[b], "root")
        nodes["root"].children.append(bid)
    for t in range(n_topics):
        branch = t // spec.leaves_per_branch
        tid = f"topic{t:02d}"
        words = core_words[t]
        nodes[tid] = TaxonomyNode(tid, f"{words[0]} {words[1]}", f"branch{branch}")
        nodes[f"branch{branch}"].children.append(tid)
    taxonomy = Taxonomy(nodes)

    docs: list[Document] = []
    doc_topic: dict[str, str] = {}
    for t in range(n_topics):
        branch = t // spec.leaves_per_branch
        words = core_words[t]
        siblings = [s for s in range(branch * spec.leaves_per_branch,
                                     (branch + 1) * spec.leaves_per_branch) if s != t]
        for i in range(spec.docs_per_topic):
            doc_id = f"d{t:02d}_{i:02d}"
            title = f"{words[0]} {words[1]} {branch_words[branch]}"
            # Core tokens with repetition, the topic's signature bigram
            # (kept contiguous), a couple of rare marker tokens repeated so
            # BM25 notices them, and light noise.
            markers = rng.choice(marker_words[t], size=spec.markers_per_doc,
                                 replace=False)
            segments: list[str] = []
            segments.extend(rng.choice(words, size=6).tolist())
            segments.append(f"{words[2]} {words[3]}")
            segments.append(f"{words[2]} {words[3]}")
            for marker in markers:
                segments.extend([marker, marker])
            segments.extend(rng.choice(generic, size=2).tolist())
            if rng.random() < 0.2:
                sibling = int(rng.choice(siblings))
                segments.append(core_words[sibling][rng.integers(spec.core_vocab)])
            order = rng.permutation(len(segments))
            abstract = " ".join(segments[i] for i in order)
            docs.append(Document(id=doc_id, title=title, abstract=abstract))
            doc_topic[doc_id] = f"topic{t:02d}"
    corpus = Corpus(docs)

    def make_queries(prefix: str, per_topic: int, offset: int):
        queries: dict[str, str] = {}
        qrels: dict[str, dict[str, int]] = {}
        for t in range(n_topics):
            relevant = {doc.id: 2 for doc in corpus if doc_topic[doc.id] == f"topic{t:02d}"}
            for j in range(per_topic):
                qid = f"{prefix}{t:02d}_{j}"
                k = int(rng.integers(2, spec.synonym_vocab + 1))
                picked = rng.choice(synonyms[t], size=k, replace=False).tolist()
                picked.extend(rng.choice(generic, size=2).tolist())
                queries[qid] = " ".join(picked)
                qrels[qid] = dict(relevant)
        return queries, qrels

    train_queries, train_qrels = make_queries("qtrain", spec.train_queries_per_topic, 0)
    test_queries, test_qrels = make_queries("qtest", spec.test_queries_per_topic, 1000)

    # Catalog as an external phrase miner would supply it: frequent single
    # tokens plus each topic's signature bigram. A bag-of-tokens backbone
    # carries no adjacency information, so arbitrary co-occurrence bigrams
    # would be pure label noise.
    mined = mine_phrase_candidates(corpus, min_freq=3, max_len=1)
    phrases = dict(mined.phrases)
    for t in range(n_topics):
        words = core_words[t]
        phrases[f"sig{t:03d}"] = Phrase(surface=(words[2], words[3]), integrity=1.0)
    catalog = PhraseCatalog(phrases)

    return SyntheticWorld(spec=spec, corpus=corpus, taxonomy=taxonomy,
                          catalog=catalog,
                          train_queries=train_queries, test_queries=test_queries,
                          train_qrels=train_qrels, test_qrels=test_qrels,
                          doc_topic=doc_topic)


def write_world(world: SyntheticWorld, data_dir) -> None:
    """Materialize a synthetic world as the on-disk input files the CLI
    pipeline consumes."""
    import json
    from pathlib import Path

    from .concept_index import save_phrase_catalog
    from .taxonomy import save_taxonomy

    data_dir = Path(data_dir)
    data_dir.mkdir(parents=True, exist_ok=True)
    with (data_dir / "corpus.jsonl").open("w", encoding="utf-8") as fh:
        for doc in world.corpus:
            fh.write(json.dumps({"id": doc.id, "title": doc.title,
                                 "abstract": doc.abstract}) + "\n")
    save_taxonomy(world.taxonomy, data_dir / "taxonomy.jsonl")
    save_phrase_catalog(world.catalog, data_dir / "phrases.jsonl")
    with (data_dir / "queries.jsonl").open("w", encoding="utf-8") as fh:
        for qid in sorted(world.test_queries):
            fh.write(json.dumps({"id": qid, "text": world.test_queries[qid]}) + "\n")
    with (data_dir / "qrels.tsv").open("w", encoding="utf-8") as fh:
        for qid in sorted(world.test_qrels):
            for doc_id, grade in sorted(world.test_qrels[qid].items()):
                fh.write(f"{qid}\t{doc_id}\t{grade}\n")
    with (data_dir / "train_pairs.jsonl").open("w", encoding="utf-8") as fh:
        for qid in sorted(world.train_queries):
            positive = sorted(world.train_qrels[qid])[0]
            fh.write(json.dumps({"query_id": qid,
                                 "query_text": world.train_queries[qid],
                                 "positive_doc_id": positive}) + "\n")
    with (data_dir / "train_qrels.tsv").open("w", encoding="utf-8") as fh:
        for qid in sorted(world.train_qrels):
            for doc_id, grade in sorted(world.train_qrels[qid].items()):
                fh.write(f"{qid}\t{doc_id}\t{grade}\n")


@dataclass
class ExperimentResult:
    num_topics_tailored: int
    num_phrases: int
    warmup_epochs: int
    warmup_topic_precision: float
    warmup_phrase_precision: float
    train_logs: list
    backbone_ndcg5: float
    fused_ndcg5: float

    @property
    def uplift(self) -> float:
        if self.backbone_ndcg5 == 0.0:
            return float("inf") if self.fused_ndcg5 > 0 else 1.0
        return self.fused_ndcg5 / self.backbone_ndcg5


def run_experiment(spec: SyntheticSpec | None = None,
                   train_config: TrainConfig | None = None,
                   retention_percent: float = 25.0,
                   progress=None) -> ExperimentResult:
    """End-to-end pipeline on the synthetic world: index construction,
    warmup, joint training, offline encoding, and NDCG@5 comparison of the
    fused search against the frozen backbone."""
    spec = spec or SyntheticSpec()
    train_config = train_config or TrainConfig(
        learning_rate=5e-3, batch_size=64, epochs=30, mined_negatives=20,
        negatives_per_step=4, warmup_max_epochs=600, warmup_tolerance=1e-5,
        seed=spec.seed)
    world = generate_world(spec)
    corpus = world.corpus
    provider = SyntheticEmbeddingProvider(dim=spec.embed_dim, seed=spec.seed)
    stats = CorpusStats.from_corpus(corpus)

    def log(msg):
        if progress is not None:
            progress(msg)

    catalog = world.catalog
    log(f"building forward index over {len(corpus)} docs "
        f"({len(catalog)} catalog phrases)")
    records, tailored = build_forward_index(
        corpus, world.taxonomy, catalog, provider,
        config=IndexBuildConfig(selection="score", filter_mode="median"),
        stats=stats)
    space = LabelSpace.build(tailored, catalog)
    inputs = AddonInputs.build(tailored, catalog, provider, space)
    addon_config = AddonConfig(dim=spec.embed_dim, num_topics=space.num_topics,
                               num_phrases=space.num_phrases)
    params = ParameterSet.initialize(addon_config, seed=spec.seed)

    doc_examples: dict[str, TextExample] = {}
    for doc in corpus:
        y_t, y_p = space.label_vectors(records[doc.id])
        doc_examples[doc.id] = TextExample(
            key=doc.id, backbone=provider.vector(f"doc:{doc.id}", text=doc.body_text),
            topic_labels=y_t, phrase_labels=y_p)

    pair_rng = np.random.default_rng(spec.seed + 1)
    pairs: list[TrainingPair] = []
    for qid, text in sorted(world.train_queries.items()):
        relevant = sorted(world.train_qrels[qid])
        y_t, y_p = query_labels(relevant, records, space)
        query = TextExample(key=qid,
                            backbone=provider.vector(f"query:{qid}", text=text),
                            topic_labels=y_t, phrase_labels=y_p)
        positive = relevant[int(pair_rng.integers(len(relevant)))]
        core_sets = {d: r.core_topics for d, r in records.items()}
        negatives = mine_negatives(tokenize(text), positive, core_sets, corpus,
                                   stats, relevant=set(relevant),
                                   n=train_config.mined_negatives)
        pairs.append(TrainingPair(query_id=qid, positive=positive,
                                  negatives=negatives, query=query))

    log("warming up the indexing network")
    warm_texts = list(doc_examples.values()) + [p.query for p in pairs]
    warm = warmup(params, addon_config, inputs, warm_texts, train_config,
                  precision_texts=list(doc_examples.values()))
    log(f"warmup done after {warm.epochs_run} epochs: "
        f"topic P@10 {warm.topic_precision:.3f}, "
        f"phrase P@10 {warm.phrase_precision:.3f}")
    logs = train(params, addon_config, inputs, pairs, doc_examples, train_config)
    log(f"trained {len(logs)} epochs; final CL {logs[-1].contrastive:.4f}")

    fused, predictions = encode_corpus(corpus, provider, params, addon_config, inputs)
    engine = SearchEngine(corpus=corpus, records=records, tailored=tailored,
                          catalog=catalog, space=space, params=params,
                          addon_config=addon_config, inputs=inputs,
                          provider=provider, fused=fused,
                          doc_predictions=predictions)
    backbone_scores, fused_scores = [], []
    config = RetrievalConfig(retention_percent=retention_percent, top_k=50,
                             explain_topics=0, explain_phrases=0)
    for qid, text in sorted(world.test_queries.items()):
        relevant = {d for d, g in world.test_qrels[qid].items() if g >= 1}
        q_emb = provider.vector(f"query:{qid}", text=text)
        by_backbone = sorted(
            corpus.ids(),
            key=lambda d: (-float(q_emb @ provider.vector(f"doc:{d}")), d))
        backbone_scores.append(ndcg_at_k(by_backbone[:5], relevant, 5))
        result = search(text, engine, config, query_key=f"query:{qid}")
        fused_scores.append(ndcg_at_k([r["doc_id"] for r in result.ranked][:5],
                                      relevant, 5))
    return ExperimentResult(
        num_topics_tailored=space.num_topics, num_phrases=space.num_phrases,
        warmup_epochs=warm.epochs_run,
        warmup_topic_precision=warm.topic_precision,
        warmup_phrase_precision=warm.phrase_precision,
        train_logs=logs,
        backbone_ndcg5=float(np.mean(backbone_scores)),
        fused_ndcg5=float(np.mean(fused_scores)))
