"""Corpus ingestion, tokenization, corpus statistics, BM25, and Jaccard utilities.

Everything here is plain lexical machinery: it underpins phrase
indicativeness scoring and hard-negative mining but knows nothing about
taxonomies or embeddings.
"""

from __future__ import annotations

import json
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

_WORD_RE = re.compile(r"[^\W_]+", re.UNICODE)


class CorpusError(ValueError):
    """Raised for malformed or inconsistent corpus files."""


def tokenize(text: str) -> list[str]:
    """Lowercased Unicode-alphanumeric word tokens, in order."""
    return _WORD_RE.findall(text.lower())


@dataclass(frozen=True)
class Document:
    id: str
    title: str
    abstract: str

    @property
    def body_text(self) -> str:
        """Canonical text used for all lexical and embedding operations."""
        return f"{self.title}. {self.abstract}"


class Corpus:
    """Immutable ordered collection of documents with unique ids."""

    def __init__(self, documents: list[Document]):
        self.documents = list(documents)
        self._by_id: dict[str, Document] = {}
        for doc in self.documents:
            if not doc.id:
                raise CorpusError("document with empty id")
            if doc.id in self._by_id:
                raise CorpusError(f"duplicate document id {doc.id!r}")
            if not doc.body_text.strip(". "):
                raise CorpusError(f"document {doc.id!r} has empty body text")
            self._by_id[doc.id] = doc

    def __len__(self) -> int:
        return len(self.documents)

    def __iter__(self):
        return iter(self.documents)

    def __contains__(self, doc_id: str) -> bool:
        return doc_id in self._by_id

    def get(self, doc_id: str) -> Document:
        try:
            return self._by_id[doc_id]
        except KeyError:
            raise KeyError(f"unknown document id {doc_id!r}") from None

    def ids(self) -> list[str]:
        return [d.id for d in self.documents]


def load_corpus(path: str | Path) -> Corpus:
    """Load a JSONL corpus file with fields id, title, abstract."""
    path = Path(path)
    docs: list[Document] = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from exc
            try:
                docs.append(Document(id=str(obj["id"]), title=str(obj["title"]),
                                     abstract=str(obj["abstract"])))
            except KeyError as exc:
                raise CorpusError(f"{path}:{lineno}: missing field {exc.args[0]!r}") from exc
    if not docs:
        raise CorpusError(f"{path}: empty corpus file")
    return Corpus(docs)


def load_queries(path: str | Path) -> dict[str, str]:
    """Load a JSONL queries file with fields id, text. Returns id -> text."""
    path = Path(path)
    queries: dict[str, str] = {}
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                qid, text = str(obj["id"]), str(obj["text"])
            except (json.JSONDecodeError, KeyError) as exc:
                raise CorpusError(f"{path}:{lineno}: bad query record ({exc})") from exc
            if qid in queries:
                raise CorpusError(f"{path}:{lineno}: duplicate query id {qid!r}")
            queries[qid] = text
    return queries


def load_qrels(path: str | Path) -> dict[str, dict[str, int]]:
    """Load a TSV relevance file: query_id<TAB>doc_id<TAB>grade."""
    path = Path(path)
    qrels: dict[str, dict[str, int]] = {}
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise CorpusError(f"{path}:{lineno}: expected 3 tab-separated fields")
            qid, doc_id, grade = parts
            try:
                g = int(grade)
            except ValueError as exc:
                raise CorpusError(f"{path}:{lineno}: grade {grade!r} is not an integer") from exc
            if g < 0:
                raise CorpusError(f"{path}:{lineno}: negative grade")
            qrels.setdefault(qid, {})[doc_id] = g
    return qrels


@dataclass(frozen=True)
class Bm25Params:
    k1: float = 1.2
    b: float = 0.75

    def __post_init__(self):
        if self.k1 < 0:
            raise ValueError("k1 must be nonnegative")
        if not 0.0 <= self.b <= 1.0:
            raise ValueError("b must lie in [0, 1]")


@dataclass
class CorpusStats:
    """Token-level corpus statistics backing BM25 scoring.

    ``term_freq`` keeps per-document term counts so that scoring needs no
    second pass over the raw text.
    """

    doc_count: int
    avg_doc_len: float
    doc_freq: dict[str, int]
    doc_len: dict[str, int]
    term_freq: dict[str, Counter] = field(repr=False, default_factory=dict)
    tokens: dict[str, list[str]] = field(repr=False, default_factory=dict)

    @classmethod
    def from_corpus(cls, corpus: Corpus) -> "CorpusStats":
        doc_freq: Counter = Counter()
        doc_len: dict[str, int] = {}
        term_freq: dict[str, Counter] = {}
        tokens: dict[str, list[str]] = {}
        for doc in corpus:
            toks = tokenize(doc.body_text)
            tokens[doc.id] = toks
            doc_len[doc.id] = len(toks)
            counts = Counter(toks)
            term_freq[doc.id] = counts
            doc_freq.update(counts.keys())
        n = len(corpus)
        avg = sum(doc_len.values()) / n if n else 0.0
        return cls(doc_count=n, avg_doc_len=avg, doc_freq=dict(doc_freq),
                   doc_len=doc_len, term_freq=term_freq, tokens=tokens)


def _idf(df: int, n_docs: int) -> float:
    return math.log(1.0 + (n_docs - df + 0.5) / (df + 0.5))


def _bm25_term(tf: int, df: int, dlen: int, stats: CorpusStats, params: Bm25Params) -> float:
    if tf <= 0:
        return 0.0
    norm = 1.0 - params.b + params.b * (dlen / stats.avg_doc_len)
    return _idf(df, stats.doc_count) * (tf * (params.k1 + 1.0)) / (tf + params.k1 * norm)


def bm25_score(query_tokens: list[str], doc_id: str, stats: CorpusStats,
               params: Bm25Params = Bm25Params()) -> float:
    """Okapi BM25 of a tokenized query against one document.

    Terms absent from the document contribute zero; repeated query terms
    contribute once per occurrence in the query.
    """
    if doc_id not in stats.doc_len:
        raise KeyError(f"unknown document id {doc_id!r}")
    tf = stats.term_freq[doc_id]
    dlen = stats.doc_len[doc_id]
    score = 0.0
    for term in query_tokens:
        df = stats.doc_freq.get(term, 0)
        if df == 0:
            continue
        score += _bm25_term(tf.get(term, 0), df, dlen, stats, params)
    return score


def bm25_top_k(query_tokens: list[str], corpus: Corpus, stats: CorpusStats,
               params: Bm25Params, k: int) -> list[tuple[str, float]]:
    """Top-k documents by BM25, descending score, ties by ascending id."""
    if k < 1:
        raise ValueError("k must be at least 1")
    scored = [(doc.id, bm25_score(query_tokens, doc.id, stats, params)) for doc in corpus]
    scored.sort(key=lambda pair: (-pair[1], pair[0]))
    return scored[:k]


def jaccard(a: set, b: set) -> float:
    """|a ∩ b| / |a ∪ b|, with the both-empty case defined as 0."""
    if not a and not b:
        return 0.0
    return len(a & b) / len(a | b)


def count_phrase_occurrences(phrase_tokens: tuple[str, ...] | list[str],
                             doc_tokens: list[str]) -> int:
    """Count exact contiguous occurrences of a token sequence."""
    n = len(phrase_tokens)
    if n == 0 or n > len(doc_tokens):
        return 0
    phrase = tuple(phrase_tokens)
    return sum(1 for i in range(len(doc_tokens) - n + 1)
               if tuple(doc_tokens[i:i + n]) == phrase)


class PhraseStats:
    """Per-phrase tf/df treating each multi-word phrase as a single term.

    Needed because indicativeness scores whole phrases, not tokens: a
    phrase's tf in a document is the count of exact contiguous matches,
    and its df the number of documents with at least one match.
    """

    def __init__(self, surfaces: dict[str, tuple[str, ...]], stats: CorpusStats):
        self.surfaces = surfaces
        self.tf: dict[str, dict[str, int]] = {pid: {} for pid in surfaces}
        self.df: dict[str, int] = {pid: 0 for pid in surfaces}
        by_first: dict[str, list[str]] = {}
        for pid, surface in surfaces.items():
            if surface:
                by_first.setdefault(surface[0], []).append(pid)
        for doc_id, toks in stats.tokens.items():
            counts: Counter = Counter()
            for i, tok in enumerate(toks):
                for pid in by_first.get(tok, ()):
                    surface = surfaces[pid]
                    if tuple(toks[i:i + len(surface)]) == surface:
                        counts[pid] += 1
            for pid, c in counts.items():
                self.tf[pid][doc_id] = c
                self.df[pid] += 1

    def phrase_bm25(self, phrase_id: str, doc_id: str, stats: CorpusStats,
                    params: Bm25Params) -> float:
        """BM25 of one phrase-as-term against one document."""
        if doc_id not in stats.doc_len:
            raise KeyError(f"unknown document id {doc_id!r}")
        df = self.df.get(phrase_id, 0)
        if df == 0:
            return 0.0
        tf = self.tf[phrase_id].get(doc_id, 0)
        return _bm25_term(tf, df, stats.doc_len[doc_id], stats, params)

    def docs_containing(self, phrase_id: str) -> set[str]:
        return set(self.tf.get(phrase_id, ()))
