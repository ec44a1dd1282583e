"""Semantic forward-index construction: core-topic selection (LLM-backed
with replayable fixtures, or score-based), indicative-phrase scoring, and
index persistence.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import time
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

from .embeddings import EmbeddingProvider
from .lexical import Bm25Params, Corpus, CorpusStats, PhraseStats, jaccard, tokenize
from .taxonomy import (
    CandidateSet,
    FilterPolicy,
    SubtreeScorer,
    TailoredTaxonomy,
    Taxonomy,
    candidate_topics,
    compute_topic_medians,
    score_filter,
    tailor_taxonomy,
)

LLM_KEY_ENV = "TAXOINDEX_LLM_KEY"
MAX_SELECTED_TOPICS = 10
BM25_EXP_CLAMP = 30.0

PROMPT_TEMPLATE = (
    "Instruction: You will receive a paper abstract along with a set of "
    "candidate topics for the paper. Your task is to select the topics that "
    "best align with the core theme of the paper. Exclude topics that are "
    "too broad or less relevant. You may list up to 10 topics, using only "
    "the topic names in the candidate set. Do not include any explanation.\n"
    "Paper: {document},\n"
    "Candidate topic set: {candidates}"
)


class IndexBuildError(ValueError):
    """Raised for unusable inputs to the index build pipeline."""


class LlmClientError(RuntimeError):
    """Raised when the LLM backend (live or replay) cannot produce a reply."""


@dataclass(frozen=True)
class Phrase:
    surface: tuple[str, ...]
    integrity: float


class PhraseCatalog:
    """Phrase vocabulary with integrity scores in [0, 1]."""

    def __init__(self, phrases: dict[str, Phrase]):
        seen: dict[tuple[str, ...], str] = {}
        for pid, phrase in phrases.items():
            if not phrase.surface:
                raise IndexBuildError(f"phrase {pid!r} has empty surface")
            if not 0.0 <= phrase.integrity <= 1.0:
                raise IndexBuildError(f"phrase {pid!r} integrity outside [0, 1]")
            if phrase.surface in seen:
                raise IndexBuildError(
                    f"duplicate phrase surface {' '.join(phrase.surface)!r}")
            seen[phrase.surface] = pid
        self.phrases = dict(phrases)

    def __len__(self) -> int:
        return len(self.phrases)

    def __contains__(self, pid: str) -> bool:
        return pid in self.phrases

    def get(self, pid: str) -> Phrase:
        try:
            return self.phrases[pid]
        except KeyError:
            raise KeyError(f"unknown phrase id {pid!r}") from None

    def surface_text(self, pid: str) -> str:
        return " ".join(self.get(pid).surface)

    def surfaces(self) -> dict[str, tuple[str, ...]]:
        return {pid: phrase.surface for pid, phrase in self.phrases.items()}


def load_phrase_catalog(path: str | Path) -> PhraseCatalog:
    """Load an external phrase file: JSONL {"phrase": str, "integrity": float}.
    Ids are assigned by file position."""
    path = Path(path)
    phrases: dict[str, Phrase] = {}
    with path.open(encoding="utf-8") as fh:
        index = 0
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                surface = tuple(tokenize(str(obj["phrase"])))
                integrity = float(obj["integrity"])
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise IndexBuildError(f"{path}:{lineno}: bad phrase record ({exc})") from exc
            phrases[f"p{index:05d}"] = Phrase(surface=surface, integrity=integrity)
            index += 1
    return PhraseCatalog(phrases)


def save_phrase_catalog(catalog: PhraseCatalog, path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for pid in sorted(catalog.phrases):
            phrase = catalog.phrases[pid]
            fh.write(json.dumps({"phrase": " ".join(phrase.surface),
                                 "integrity": phrase.integrity}) + "\n")


def mine_phrase_candidates(corpus: Corpus, min_freq: int, max_len: int) -> PhraseCatalog:
    """Fallback phrase miner: contiguous n-grams with corpus occurrence
    count >= min_freq. Integrity is a normalized pointwise-association
    proxy in [0, 1]; unigrams get 1.0.
    """
    if min_freq < 2:
        raise ValueError("min_freq must be at least 2")
    if not 1 <= max_len <= 5:
        raise ValueError("max_len must lie in [1, 5]")
    ngram_counts: Counter = Counter()
    token_counts: Counter = Counter()
    window_totals = [0] * (max_len + 1)
    for doc in corpus:
        toks = tokenize(doc.body_text)
        token_counts.update(toks)
        for n in range(1, max_len + 1):
            window_totals[n] += max(0, len(toks) - n + 1)
            for i in range(len(toks) - n + 1):
                ngram_counts[tuple(toks[i:i + n])] += 1
    total_tokens = sum(token_counts.values())
    phrases: dict[str, Phrase] = {}
    kept = sorted(g for g, c in ngram_counts.items() if c >= min_freq)
    for index, gram in enumerate(kept):
        if len(gram) == 1:
            integrity = 1.0
        else:
            p_gram = ngram_counts[gram] / window_totals[len(gram)]
            p_tokens = 1.0
            for tok in gram:
                p_tokens *= token_counts[tok] / total_tokens
            pmi = math.log(p_gram / p_tokens)
            npmi = pmi / -math.log(p_gram)
            integrity = min(1.0, max(0.0, (npmi + 1.0) / 2.0))
        phrases[f"p{index:05d}"] = Phrase(surface=gram, integrity=integrity)
    return PhraseCatalog(phrases)


@dataclass(frozen=True)
class LlmClientConfig:
    endpoint: str = ""
    model: str = ""
    temperature: float = 0.2
    mode: str = "replay"
    fixture_path: str | None = None
    max_retries: int = 3
    timeout: float = 30.0

    def __post_init__(self):
        if self.mode not in ("live", "replay"):
            raise ValueError(f"unknown LLM client mode {self.mode!r}")
        if self.mode == "replay" and not self.fixture_path:
            raise ValueError("replay mode requires a fixture path")


def build_prompt(document_text: str, candidate_names: list[str]) -> str:
    return PROMPT_TEMPLATE.format(document=document_text,
                                  candidates=", ".join(candidate_names))


def request_fingerprint(prompt: str, model: str, temperature: float) -> str:
    payload = json.dumps({"prompt": prompt, "model": model, "temperature": temperature},
                         sort_keys=True)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


class LlmClient:
    """Chat-completion client with a replay mode for deterministic builds.

    Replay fixtures are JSONL records {"fingerprint": str, "content": str},
    keyed by the hash of (prompt, model, temperature).
    """

    def __init__(self, config: LlmClientConfig):
        self.config = config
        self._fixtures: dict[str, str] = {}
        if config.mode == "replay":
            path = Path(config.fixture_path)
            with path.open(encoding="utf-8") as fh:
                for lineno, line in enumerate(fh, start=1):
                    if not line.strip():
                        continue
                    try:
                        obj = json.loads(line)
                        self._fixtures[str(obj["fingerprint"])] = str(obj["content"])
                    except (json.JSONDecodeError, KeyError) as exc:
                        raise LlmClientError(
                            f"{path}:{lineno}: malformed fixture ({exc})") from exc

    def complete(self, prompt: str) -> str:
        if self.config.mode == "replay":
            key = request_fingerprint(prompt, self.config.model, self.config.temperature)
            if key not in self._fixtures:
                raise LlmClientError(f"no fixture for request fingerprint {key}")
            return self._fixtures[key]
        return self._complete_live(prompt)

    def _complete_live(self, prompt: str) -> str:
        import requests

        headers = {"Content-Type": "application/json"}
        api_key = os.environ.get(LLM_KEY_ENV)
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        body = {"model": self.config.model, "temperature": self.config.temperature,
                "messages": [{"role": "user", "content": prompt}]}
        last_error: Exception | None = None
        for attempt in range(self.config.max_retries):
            try:
                resp = requests.post(self.config.endpoint, json=body,
                                     headers=headers, timeout=self.config.timeout)
                resp.raise_for_status()
                return str(resp.json()["content"])
            except Exception as exc:  # noqa: BLE001 - retried, then surfaced
                last_error = exc
                time.sleep(min(2.0 ** attempt, 8.0))
        raise LlmClientError(f"LLM request failed after "
                             f"{self.config.max_retries} attempts: {last_error}")


def parse_topic_reply(reply: str, name_to_id: dict[str, str]) -> list[str]:
    """Map an LLM reply to candidate topic ids by case-insensitive exact
    name match, dropping anything not in the candidate set."""
    selected: list[str] = []
    for line in reply.splitlines():
        for piece in line.split(","):
            name = piece.strip().strip(".;:-*• \t").lower()
            if not name:
                continue
            nid = name_to_id.get(name)
            if nid is not None and nid not in selected:
                selected.append(nid)
    return selected[:MAX_SELECTED_TOPICS]


def select_core_topics_llm(doc_text: str, cand: CandidateSet, tax: Taxonomy,
                           client: LlmClient,
                           fallback_policy: FilterPolicy | None = None) -> set[str]:
    """Ask the LLM to pick core topics from the candidates; unmatched names
    are discarded and an empty result falls back to score filtering."""
    if not cand.candidates:
        raise IndexBuildError(f"empty candidate set for doc {cand.doc_id!r}")
    ordered = sorted(cand.candidates, key=lambda nid: (-cand.sims[nid], nid))
    names = [tax.name(nid) for nid in ordered]
    name_to_id: dict[str, str] = {}
    for nid, name in zip(ordered, names):
        name_to_id.setdefault(name.lower(), nid)
    reply = client.complete(build_prompt(doc_text, names))
    selected = parse_topic_reply(reply, name_to_id)
    if not selected:
        policy = fallback_policy or FilterPolicy(mode="absolute", tau=float("inf"))
        return score_filter(cand, policy)
    return set(selected)


def topically_similar_docs(doc_id: str, core_sets: dict[str, set[str]],
                           size: int = 100) -> list[str]:
    """Top-`size` other documents by Jaccard similarity of core-topic sets,
    ties broken by ascending id."""
    if doc_id not in core_sets:
        raise KeyError(f"unknown document id {doc_id!r}")
    own = core_sets[doc_id]
    scored = sorted(((other, jaccard(own, topics))
                     for other, topics in core_sets.items() if other != doc_id),
                    key=lambda pair: (-pair[1], pair[0]))
    return [other for other, _ in scored[:size]]


def distinctiveness(phrase_id: str, doc_id: str, similar: list[str],
                    phrase_stats: PhraseStats, stats: CorpusStats,
                    params: Bm25Params) -> float:
    """Relative relevance of a phrase to a document against its topically
    similar set: exp(BM25(p, d)) / (1 + sum over similar docs of
    exp(BM25(p, d'))), capped at 1. BM25 values are clamped at 30 before
    exponentiation as an overflow guard."""
    own = min(phrase_stats.phrase_bm25(phrase_id, doc_id, stats, params), BM25_EXP_CLAMP)
    denom = 1.0
    for other in similar:
        score = min(phrase_stats.phrase_bm25(phrase_id, other, stats, params),
                    BM25_EXP_CLAMP)
        denom += math.exp(score)
    return min(1.0, math.exp(own) / denom)


def indicativeness(phrase_id: str, doc_id: str, similar: list[str],
                   catalog: PhraseCatalog, phrase_stats: PhraseStats,
                   stats: CorpusStats, params: Bm25Params) -> float:
    """Geometric mean of distinctiveness and integrity."""
    integrity = catalog.get(phrase_id).integrity
    dist = distinctiveness(phrase_id, doc_id, similar, phrase_stats, stats, params)
    return math.sqrt(dist * integrity)


def phrase_budget(occurring: int, max_phrases: int = 15, fraction: float = 0.2) -> int:
    """Per-document phrase count: min(max, ceil(occurring * fraction)),
    at least 1 when any catalog phrase occurs."""
    if occurring <= 0:
        return 0
    return max(1, min(max_phrases, math.ceil(occurring * fraction)))


def select_indicative_phrases(doc_id: str, catalog: PhraseCatalog, similar: list[str],
                              phrase_stats: PhraseStats, stats: CorpusStats,
                              params: Bm25Params, max_phrases: int = 15,
                              fraction: float = 0.2) -> list[tuple[str, float]]:
    """Top-k phrases occurring in the document by indicativeness,
    descending score with ties by ascending phrase id."""
    occurring = [pid for pid in catalog.phrases
                 if phrase_stats.tf.get(pid, {}).get(doc_id, 0) > 0]
    k = phrase_budget(len(occurring), max_phrases, fraction)
    if k == 0:
        return []
    scored = [(pid, indicativeness(pid, doc_id, similar, catalog, phrase_stats,
                                   stats, params))
              for pid in occurring]
    scored.sort(key=lambda pair: (-pair[1], pair[0]))
    return scored[:k]


@dataclass
class ForwardIndexRecord:
    doc_id: str
    core_topics: set[str]
    phrases: list[tuple[str, float]] = field(default_factory=list)

    def phrase_ids(self) -> list[str]:
        return [pid for pid, _ in self.phrases]


@dataclass
class IndexBuildConfig:
    selection: str = "llm"  # "llm" or "score"
    filter_mode: str = "median"  # fallback / score-based policy
    filter_tau: float = 0.0
    similar_size: int = 100
    max_phrases: int = 15
    phrase_fraction: float = 0.2
    bm25: Bm25Params = field(default_factory=Bm25Params)

    def __post_init__(self):
        if self.selection not in ("llm", "score"):
            raise ValueError(f"unknown selection mode {self.selection!r}")


def build_forward_index(corpus: Corpus, tax: Taxonomy, catalog: PhraseCatalog,
                        provider: EmbeddingProvider,
                        client: LlmClient | None = None,
                        config: IndexBuildConfig | None = None,
                        stats: CorpusStats | None = None,
                        ) -> tuple[dict[str, ForwardIndexRecord], TailoredTaxonomy]:
    """Run the whole indexing pipeline: candidate traversal, core-topic
    selection, taxonomy tailoring, topically-similar sets, and indicative
    phrases. Deterministic given fixed fixtures."""
    config = config or IndexBuildConfig(selection="score")
    if len(corpus) == 0:
        raise IndexBuildError("cannot index an empty corpus")
    if config.selection == "llm" and client is None:
        raise IndexBuildError("LLM selection requires a client")
    stats = stats or CorpusStats.from_corpus(corpus)
    scorer = SubtreeScorer(tax, provider)
    cand_sets: dict[str, CandidateSet] = {}
    for doc in corpus:
        emb = provider.vector(f"doc:{doc.id}", text=doc.body_text)
        cand_sets[doc.id] = candidate_topics(emb, tax, provider, doc_id=doc.id,
                                             scorer=scorer)
    policy = FilterPolicy(mode=config.filter_mode, tau=config.filter_tau,
                          medians=(compute_topic_medians(list(cand_sets.values()))
                                   if config.filter_mode == "median" else {}))
    core_sets: dict[str, set[str]] = {}
    for doc in corpus:
        cand = cand_sets[doc.id]
        if config.selection == "llm":
            core_sets[doc.id] = select_core_topics_llm(
                doc.body_text, cand, tax, client, fallback_policy=policy)
        else:
            core_sets[doc.id] = score_filter(cand, policy)
    tailored = tailor_taxonomy(tax, core_sets)
    phrase_stats = PhraseStats(catalog.surfaces(), stats)
    records: dict[str, ForwardIndexRecord] = {}
    for doc in corpus:
        similar = topically_similar_docs(doc.id, core_sets, size=config.similar_size)
        phrases = select_indicative_phrases(
            doc.id, catalog, similar, phrase_stats, stats, config.bm25,
            max_phrases=config.max_phrases, fraction=config.phrase_fraction)
        records[doc.id] = ForwardIndexRecord(doc_id=doc.id,
                                             core_topics=core_sets[doc.id],
                                             phrases=phrases)
    return records, tailored


def save_forward_index(records: dict[str, ForwardIndexRecord], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for doc_id in sorted(records):
            rec = records[doc_id]
            fh.write(json.dumps({
                "doc_id": rec.doc_id,
                "topics": sorted(rec.core_topics),
                "phrases": [{"id": pid, "score": score} for pid, score in rec.phrases],
            }) + "\n")


def load_forward_index(path: str | Path) -> dict[str, ForwardIndexRecord]:
    records: dict[str, ForwardIndexRecord] = {}
    path = Path(path)
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                rec = ForwardIndexRecord(
                    doc_id=str(obj["doc_id"]),
                    core_topics=set(obj["topics"]),
                    phrases=[(str(p["id"]), float(p["score"])) for p in obj["phrases"]])
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise IndexBuildError(f"{path}:{lineno}: bad index record ({exc})") from exc
            records[rec.doc_id] = rec
    return records
