"""Command-line interface: one subcommand per pipeline stage plus the
HTTP service. Exit codes: 0 success, 1 runtime error, 2 usage error."""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from . import artifacts
from .addon import AddonConfig, ParameterSet, load_checkpoint, save_checkpoint
from .artifacts import ArtifactError, ProviderConfig, load_engine, update_manifest
from .concept_index import (
    IndexBuildConfig,
    LlmClient,
    LlmClientConfig,
    build_forward_index,
    load_phrase_catalog,
    mine_phrase_candidates,
    save_forward_index,
    save_phrase_catalog,
)
from .embeddings import MissingEmbeddingError
from .evalkit import (
    Qrels,
    RunFile,
    evaluate_run,
    report_table,
    save_report,
    save_run,
)
from .lexical import (
    Bm25Params,
    CorpusStats,
    load_corpus,
    load_qrels,
    load_queries,
    tokenize,
)
from .retrieval import RetrievalConfig, SearchEngine, encode_corpus, expand_query, search
from .taxonomy import load_taxonomy, save_index_map, save_taxonomy
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


@dataclass
class Settings:
    """Everything configurable via the TOML file, with working defaults."""

    data_dir: Path = Path("data")
    provider: ProviderConfig = field(default_factory=ProviderConfig)
    bm25: Bm25Params = field(default_factory=Bm25Params)
    index: IndexBuildConfig = field(default_factory=lambda: IndexBuildConfig(
        selection="score"))
    mine_min_freq: int = 3
    mine_max_len: int = 2
    llm: LlmClientConfig | None = None
    train: TrainConfig = field(default_factory=TrainConfig)
    retrieval: RetrievalConfig = field(default_factory=RetrievalConfig)
    num_experts: int = 3
    gcn_layers: int = 2
    relevance_threshold: int = 1
    host: str = "127.0.0.1"
    port: int = 8300
    cors_origins: list[str] = field(default_factory=list)


def load_settings(config_path: str | None, data_dir: str | None,
                  seed: int | None) -> Settings:
    raw: dict = {}
    if config_path:
        with open(config_path, "rb") as fh:
            raw = tomllib.load(fh)
    settings = Settings()
    if "engine" in raw:
        eng = raw["engine"]
        settings.data_dir = Path(eng.get("data_dir", settings.data_dir))
        settings.relevance_threshold = eng.get("relevance_threshold",
                                               settings.relevance_threshold)
    if "embeddings" in raw:
        settings.provider = ProviderConfig(**raw["embeddings"])
    if "bm25" in raw:
        settings.bm25 = Bm25Params(**raw["bm25"])
    if "index" in raw:
        idx = dict(raw["index"])
        settings.mine_min_freq = idx.pop("mine_min_freq", settings.mine_min_freq)
        settings.mine_max_len = idx.pop("mine_max_len", settings.mine_max_len)
        settings.index = IndexBuildConfig(bm25=settings.bm25, **idx)
    else:
        settings.index = IndexBuildConfig(selection="score", bm25=settings.bm25)
    if "llm" in raw:
        settings.llm = LlmClientConfig(**raw["llm"])
    if "train" in raw:
        settings.train = TrainConfig(**raw["train"])
    if "retrieval" in raw:
        settings.retrieval = RetrievalConfig(**raw["retrieval"])
    if "addon" in raw:
        settings.num_experts = raw["addon"].get("num_experts", settings.num_experts)
        settings.gcn_layers = raw["addon"].get("gcn_layers", settings.gcn_layers)
    if "service" in raw:
        svc = raw["service"]
        settings.host = svc.get("host", settings.host)
        settings.port = svc.get("port", settings.port)
        settings.cors_origins = list(svc.get("cors_origins", []))
    if data_dir is not None:
        settings.data_dir = Path(data_dir)
    if seed is not None:
        settings.train = replace(settings.train, seed=seed)
    return settings


def _corpus_and_stats(settings: Settings):
    corpus = load_corpus(settings.data_dir / artifacts.CORPUS_FILE)
    return corpus, CorpusStats.from_corpus(corpus)


def _doc_backbone(provider, doc):
    return provider.vector(f"doc:{doc.id}", text=doc.body_text)


def _query_backbone(provider, query_id: str, text: str):
    try:
        return provider.vector(f"query:{query_id}", text=text)
    except MissingEmbeddingError:
        raise ArtifactError(
            f"no embedding for query {query_id!r}; export query embeddings "
            f"or use the synthetic provider") from None


def _load_index_state(settings: Settings):
    from .concept_index import load_forward_index
    from .taxonomy import load_tailored_taxonomy

    data_dir = settings.data_dir
    artifacts.verify_manifest(data_dir, artifacts.INDEX_ARTIFACTS)
    corpus, stats = _corpus_and_stats(settings)
    tailored = load_tailored_taxonomy(data_dir / artifacts.TAILORED_FILE,
                                      data_dir / artifacts.INDEX_MAP_FILE)
    records = load_forward_index(data_dir / artifacts.FORWARD_INDEX_FILE)
    catalog = load_phrase_catalog(data_dir / artifacts.PHRASES_FILE)
    provider = settings.provider.build(data_dir)
    space = LabelSpace.build(tailored, catalog)
    inputs = AddonInputs.build(tailored, catalog, provider, space)
    return corpus, stats, tailored, records, catalog, provider, space, inputs


def _doc_examples(corpus, records, space, provider):
    examples = {}
    for doc in corpus:
        y_t, y_p = space.label_vectors(records[doc.id])
        examples[doc.id] = TextExample(key=doc.id,
                                       backbone=_doc_backbone(provider, doc),
                                       topic_labels=y_t, phrase_labels=y_p)
    return examples


def _load_pairs(settings: Settings, corpus, stats, records, space, provider,
                qrels: Qrels):
    core_sets = {d: r.core_topics for d, r in records.items()}
    pairs = []
    path = settings.data_dir / "train_pairs.jsonl"
    with path.open(encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            qid = str(obj["query_id"])
            text = str(obj["query_text"])
            positive = str(obj["positive_doc_id"])
            relevant = sorted(qrels.relevant_set(qid))
            y_t, y_p = query_labels(relevant, records, space)
            query = TextExample(key=qid,
                                backbone=_query_backbone(provider, qid, text),
                                topic_labels=y_t, phrase_labels=y_p)
            negatives = mine_negatives(
                tokenize(text), positive, core_sets, corpus, stats,
                relevant=set(relevant), n=settings.train.mined_negatives,
                similar_size=settings.index.similar_size, params=settings.bm25)
            pairs.append(TrainingPair(query_id=qid, positive=positive,
                                      negatives=negatives, query=query))
    if not pairs:
        raise ArtifactError(f"no training pairs in {path}")
    return pairs


def cmd_ingest(settings: Settings, args) -> int:
    corpus, stats = _corpus_and_stats(settings)
    tax = load_taxonomy(settings.data_dir / artifacts.TAXONOMY_FILE)
    print(f"corpus: {len(corpus)} documents, "
          f"avg length {stats.avg_doc_len:.1f} tokens, "
          f"{len(stats.doc_freq)} distinct terms")
    print(f"taxonomy: {len(tax)} nodes, max depth {tax.max_depth()}")
    queries_path = settings.data_dir / "queries.jsonl"
    if queries_path.exists():
        print(f"queries: {len(load_queries(queries_path))}")
    qrels_path = settings.data_dir / "qrels.tsv"
    if qrels_path.exists():
        print(f"qrels: {sum(len(v) for v in load_qrels(qrels_path).values())} judgments")
    return 0


def cmd_mine_phrases(settings: Settings, args) -> int:
    corpus, _ = _corpus_and_stats(settings)
    catalog = mine_phrase_candidates(corpus, min_freq=args.min_freq,
                                     max_len=args.max_len)
    save_phrase_catalog(catalog, settings.data_dir / artifacts.PHRASES_FILE)
    update_manifest(settings.data_dir, [artifacts.PHRASES_FILE])
    print(f"mined {len(catalog)} phrases -> {artifacts.PHRASES_FILE}")
    return 0


def cmd_build_index(settings: Settings, args) -> int:
    corpus, stats = _corpus_and_stats(settings)
    tax = load_taxonomy(settings.data_dir / artifacts.TAXONOMY_FILE)
    catalog = load_phrase_catalog(settings.data_dir / artifacts.PHRASES_FILE)
    provider = settings.provider.build(settings.data_dir)
    index_config = settings.index
    client = None
    if args.llm_mode:
        index_config = replace(index_config, selection="llm")
        base = settings.llm or LlmClientConfig(mode=args.llm_mode,
                                               fixture_path=args.fixtures)
        client = LlmClient(replace(base, mode=args.llm_mode,
                                   fixture_path=args.fixtures or base.fixture_path))
    elif index_config.selection == "llm":
        if settings.llm is None:
            raise ArtifactError("index.selection is 'llm' but no [llm] config given")
        client = LlmClient(settings.llm)
    records, tailored = build_forward_index(corpus, tax, catalog, provider,
                                            client=client, config=index_config,
                                            stats=stats)
    data_dir = settings.data_dir
    save_forward_index(records, data_dir / artifacts.FORWARD_INDEX_FILE)
    save_taxonomy(tailored, data_dir / artifacts.TAILORED_FILE)
    save_index_map(tailored, data_dir / artifacts.INDEX_MAP_FILE)
    update_manifest(data_dir, artifacts.INDEX_ARTIFACTS + [artifacts.PHRASES_FILE])
    n_phrases = sum(len(r.phrases) for r in records.values())
    print(f"indexed {len(records)} documents: {tailored.num_topics} tailored "
          f"topics, {len(catalog)} catalog phrases, "
          f"{n_phrases / len(records):.1f} indicative phrases per doc")
    return 0


def _addon_config(settings: Settings, space: LabelSpace, dim: int) -> AddonConfig:
    return AddonConfig(dim=dim, num_topics=space.num_topics,
                       num_phrases=space.num_phrases,
                       num_experts=settings.num_experts,
                       gcn_layers=settings.gcn_layers)


def cmd_warmup(settings: Settings, args) -> int:
    corpus, stats, tailored, records, catalog, provider, space, inputs = \
        _load_index_state(settings)
    config = _addon_config(settings, space, provider.dim)
    params = ParameterSet.initialize(config, seed=settings.train.seed)
    docs = _doc_examples(corpus, records, space, provider)
    texts = list(docs.values())
    train_qrels_path = settings.data_dir / "train_qrels.tsv"
    if train_qrels_path.exists():
        qrels = Qrels(load_qrels(train_qrels_path),
                      threshold=settings.relevance_threshold)
        pairs = _load_pairs(settings, corpus, stats, records, space, provider, qrels)
        texts = texts + [pair.query for pair in pairs]
    result = warmup(params, config, inputs, texts, settings.train,
                    precision_texts=list(docs.values()))
    save_checkpoint(params, settings.data_dir / artifacts.CHECKPOINT_STEM,
                    build_hash=artifacts.index_build_hash(settings.data_dir))
    update_manifest(settings.data_dir, [f"{artifacts.CHECKPOINT_STEM}.json",
                                        f"{artifacts.CHECKPOINT_STEM}.bin"])
    print(f"warmup converged after {result.epochs_run} epochs; "
          f"topic P@10 {result.topic_precision:.3f}, "
          f"phrase P@10 {result.phrase_precision:.3f}")
    return 0


def cmd_train(settings: Settings, args) -> int:
    corpus, stats, tailored, records, catalog, provider, space, inputs = \
        _load_index_state(settings)
    config = _addon_config(settings, space, provider.dim)
    ckpt = settings.data_dir / artifacts.CHECKPOINT_STEM
    if ckpt.with_suffix(".json").exists():
        params, _ = load_checkpoint(ckpt)
        if params.config != config:
            raise ArtifactError("existing checkpoint does not match configuration")
    elif args.skip_warmup:
        params = ParameterSet.initialize(config, seed=settings.train.seed)
    else:
        raise ArtifactError("no warmup checkpoint found; run `taxoindex warmup` "
                            "first or pass --skip-warmup")
    qrels = Qrels(load_qrels(settings.data_dir / "train_qrels.tsv"),
                  threshold=settings.relevance_threshold)
    pairs = _load_pairs(settings, corpus, stats, records, space, provider, qrels)
    docs = _doc_examples(corpus, records, space, provider)
    log_path = settings.data_dir / "train_log.jsonl"
    with log_path.open("w", encoding="utf-8") as log_fh:
        def on_epoch(epoch, params_now, log):
            log_fh.write(json.dumps(log.as_dict()) + "\n")
            log_fh.flush()

        logs = train(params, config, inputs, pairs, docs, settings.train,
                     checkpoint_fn=on_epoch)
    save_checkpoint(params, ckpt,
                    build_hash=artifacts.index_build_hash(settings.data_dir))
    update_manifest(settings.data_dir, [f"{artifacts.CHECKPOINT_STEM}.json",
                                        f"{artifacts.CHECKPOINT_STEM}.bin"])
    final = logs[-1]
    print(f"trained {len(logs)} epochs over {len(pairs)} pairs; "
          f"final L_CL {final.contrastive:.4f}, "
          f"topic P@10 {final.topic_precision:.3f}, "
          f"phrase P@10 {final.phrase_precision:.3f}")
    return 0


def cmd_encode(settings: Settings, args) -> int:
    corpus, stats, tailored, records, catalog, provider, space, inputs = \
        _load_index_state(settings)
    params, _ = load_checkpoint(settings.data_dir / artifacts.CHECKPOINT_STEM)
    fused, predictions = encode_corpus(corpus, provider, params, params.config,
                                       inputs)
    artifacts.save_fused(fused, provider.dim, settings.data_dir / artifacts.FUSED_FILE)
    artifacts.save_predictions(predictions,
                               settings.data_dir / artifacts.PREDICTIONS_FILE)
    update_manifest(settings.data_dir, [artifacts.FUSED_FILE,
                                        artifacts.PREDICTIONS_FILE])
    print(f"encoded {len(fused)} documents -> {artifacts.FUSED_FILE}, "
          f"{artifacts.PREDICTIONS_FILE}")
    return 0


def _retrieval_config(settings: Settings, args) -> RetrievalConfig:
    config = settings.retrieval
    updates = {}
    if getattr(args, "k", None) is not None:
        updates["top_k"] = args.k
    if getattr(args, "retention", None) is not None:
        updates["retention_percent"] = args.retention
    if getattr(args, "expand", False):
        updates["expand"] = True
    return replace(config, **updates) if updates else config


def cmd_search(settings: Settings, args) -> int:
    engine = load_engine(settings.data_dir, settings.provider)
    config = _retrieval_config(settings, args)
    result = search(args.query, engine, config)
    for rank, row in enumerate(result.ranked, start=1):
        title = engine.corpus.get(row["doc_id"]).title
        print(f"{rank}\t{row['doc_id']}\t{row['score']:.8g}"
              f"\t{row['backbone_score']:.8g}\t{row['topic_overlap']:.8g}\t{title}")
    return 0


def cmd_expand(settings: Settings, args) -> int:
    engine = load_engine(settings.data_dir, settings.provider)
    print(expand_query(args.query, engine, k=settings.retrieval.expansion_k))
    return 0


def cmd_eval(settings: Settings, args) -> int:
    engine = load_engine(settings.data_dir, settings.provider)
    queries = load_queries(settings.data_dir / "queries.jsonl")
    qrels = Qrels(load_qrels(settings.data_dir / "qrels.tsv"),
                  threshold=settings.relevance_threshold)
    config = replace(_retrieval_config(settings, args), top_k=args.depth,
                     explain_topics=0, explain_phrases=0)
    run = RunFile()
    scores: dict[str, dict[str, float]] = {}
    for qid in sorted(queries):
        if args.backbone:
            q_emb = _query_backbone(engine.provider, qid, queries[qid])
            ranked_scores = {
                doc.id: float(q_emb @ _doc_backbone(engine.provider, doc))
                for doc in engine.corpus}
            ranked = sorted(ranked_scores, key=lambda d: (-ranked_scores[d], d))
            run.add(qid, ranked[:args.depth])
            scores[qid] = {d: ranked_scores[d] for d in ranked[:args.depth]}
        else:
            result = search(queries[qid], engine, config, query_key=f"query:{qid}")
            run.add(qid, [row["doc_id"] for row in result.ranked])
            scores[qid] = {row["doc_id"]: row["score"] for row in result.ranked}
    report = evaluate_run(run, qrels)
    suffix = "backbone" if args.backbone else "fused"
    save_run(run, scores, settings.data_dir / f"run_{suffix}.tsv")
    save_report(report, settings.data_dir / f"report_{suffix}.json")
    print(report_table(report))
    return 0


def cmd_serve(settings: Settings, args) -> int:
    import uvicorn

    from .service import create_app

    app = create_app(lambda: load_engine(settings.data_dir, settings.provider),
                     retrieval_defaults=settings.retrieval,
                     cors_origins=settings.cors_origins)
    uvicorn.run(app, host=args.host or settings.host,
                port=args.port or settings.port, log_level="warning")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="taxoindex",
        description="Concept-aware academic search engine: build a "
                    "taxonomy-guided semantic index, train the add-on "
                    "module, and serve retrieval.")
    parser.add_argument("--config", help="TOML configuration file")
    parser.add_argument("--data-dir", help="artifact directory (default ./data)")
    parser.add_argument("--seed", type=int, help="override the training seed")
    parser.add_argument("--json", action="store_true",
                        help="machine-readable errors on stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("ingest", help="validate corpus/taxonomy inputs")
    mine = sub.add_parser("mine-phrases", help="mine a fallback phrase catalog")
    mine.add_argument("--min-freq", type=int, default=3)
    mine.add_argument("--max-len", type=int, default=2)
    build = sub.add_parser("build-index", help="build the semantic forward index")
    build.add_argument("--llm-mode", choices=["live", "replay"],
                       help="use LLM-based core-topic selection")
    build.add_argument("--fixtures", help="replay fixture file for the LLM client")
    sub.add_parser("warmup", help="warm up the indexing network")
    train_p = sub.add_parser("train", help="joint fine-tuning of the add-on")
    train_p.add_argument("--skip-warmup", action="store_true",
                         help="initialize fresh parameters if no checkpoint exists")
    sub.add_parser("encode", help="precompute fused embeddings and predictions")
    search_p = sub.add_parser("search", help="run one query")
    search_p.add_argument("--query", required=True)
    search_p.add_argument("--k", type=int)
    search_p.add_argument("--retention", type=float)
    search_p.add_argument("--expand", action="store_true")
    expand_p = sub.add_parser("expand", help="show the expanded form of a query")
    expand_p.add_argument("--query", required=True)
    eval_p = sub.add_parser("eval", help="evaluate against qrels")
    eval_p.add_argument("--depth", type=int, default=100,
                        help="ranking depth (covers the largest recall cutoff)")
    eval_p.add_argument("--retention", type=float)
    eval_p.add_argument("--expand", action="store_true")
    eval_p.add_argument("--backbone", action="store_true",
                        help="rank by raw backbone embeddings instead")
    serve_p = sub.add_parser("serve", help="run the HTTP service")
    serve_p.add_argument("--host")
    serve_p.add_argument("--port", type=int)
    return parser


_COMMANDS = {
    "ingest": cmd_ingest,
    "mine-phrases": cmd_mine_phrases,
    "build-index": cmd_build_index,
    "warmup": cmd_warmup,
    "train": cmd_train,
    "encode": cmd_encode,
    "search": cmd_search,
    "expand": cmd_expand,
    "eval": cmd_eval,
    "serve": cmd_serve,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        settings = load_settings(args.config, args.data_dir, args.seed)
        return _COMMANDS[args.command](settings, args)
    except Exception as exc:  # noqa: BLE001 - single CLI error boundary
        if args.json:
            print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
                  file=sys.stderr)
        else:
            print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
