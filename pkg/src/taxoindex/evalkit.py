"""Ranking metrics (NDCG@K, MAP@K, Recall@K) and run evaluation reports.

Conventions (stated here because benchmark papers rarely print formulas):
binary gains with log2 discounts for NDCG, MAP denominator
min(|relevant|, k), and recall against the full relevant set.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

CONVENTIONS_NOTE = ("binary NDCG gains, log2 discounts; "
                    "MAP denominator min(|relevant|, k); ties as ranked")


class EvalError(ValueError):
    """Raised for unusable runs or qrels."""


@dataclass
class Qrels:
    """Graded relevance judgments with a binarization threshold:
    grade >= threshold counts as relevant."""

    grades: dict[str, dict[str, int]]
    threshold: int = 1

    def relevant_set(self, query_id: str) -> set[str]:
        if query_id not in self.grades:
            raise EvalError(f"query {query_id!r} missing from qrels")
        return {doc_id for doc_id, grade in self.grades[query_id].items()
                if grade >= self.threshold}


def recall_at_k(ranked: list[str], relevant: set[str], k: int) -> float:
    """Fraction of the relevant documents found in the top k."""
    if k < 1:
        raise EvalError("k must be at least 1")
    if not relevant:
        raise EvalError("empty relevant set")
    hits = sum(1 for doc_id in ranked[:k] if doc_id in relevant)
    return hits / len(relevant)


def ndcg_at_k(ranked: list[str], relevant: set[str], k: int) -> float:
    """Binary-gain NDCG: DCG over 1/log2(rank+1) for relevant hits in the
    top k, normalized by the ideal DCG."""
    if k < 1:
        raise EvalError("k must be at least 1")
    if not relevant:
        raise EvalError("empty relevant set")
    dcg = sum(1.0 / math.log2(i + 2)
              for i, doc_id in enumerate(ranked[:k]) if doc_id in relevant)
    ideal = sum(1.0 / math.log2(i + 2) for i in range(min(k, len(relevant))))
    return dcg / ideal


def map_at_k(ranked: list[str], relevant: set[str], k: int) -> float:
    """Mean of precision at each relevant hit within the top k, with
    denominator min(|relevant|, k)."""
    if k < 1:
        raise EvalError("k must be at least 1")
    if not relevant:
        raise EvalError("empty relevant set")
    total = 0.0
    hits = 0
    for i, doc_id in enumerate(ranked[:k]):
        if doc_id in relevant:
            hits += 1
            total += hits / (i + 1)
    return total / min(len(relevant), k)


@dataclass
class RunFile:
    """Per-query ranked document lists."""

    rankings: dict[str, list[str]] = field(default_factory=dict)

    def add(self, query_id: str, ranked: list[str]) -> None:
        if len(set(ranked)) != len(ranked):
            raise EvalError(f"duplicate documents in ranking for {query_id!r}")
        self.rankings[query_id] = list(ranked)


def save_run(run: RunFile, scores: dict[str, dict[str, float]], path: str | Path) -> None:
    """TSV: query_id, doc_id, rank (1-based), score."""
    with Path(path).open("w", encoding="utf-8") as fh:
        for query_id in sorted(run.rankings):
            for rank, doc_id in enumerate(run.rankings[query_id], start=1):
                score = scores.get(query_id, {}).get(doc_id, 0.0)
                fh.write(f"{query_id}\t{doc_id}\t{rank}\t{score:.8g}\n")


def load_run(path: str | Path) -> RunFile:
    run = RunFile()
    rows: dict[str, list[tuple[int, str]]] = {}
    path = Path(path)
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 4:
                raise EvalError(f"{path}:{lineno}: expected 4 tab-separated fields")
            query_id, doc_id, rank, _ = parts
            rows.setdefault(query_id, []).append((int(rank), doc_id))
    for query_id, entries in rows.items():
        entries.sort()
        run.add(query_id, [doc_id for _, doc_id in entries])
    return run


DEFAULT_KS = {"ndcg": [5, 10], "map": [5, 10], "recall": [50, 100]}

_METRIC_FNS = {"ndcg": ndcg_at_k, "map": map_at_k, "recall": recall_at_k}
_METRIC_LABEL = {"ndcg": "N", "map": "M", "recall": "R"}


def evaluate_run(run: RunFile, qrels: Qrels,
                 ks: dict[str, list[int]] | None = None) -> dict:
    """Per-query and mean metrics for every configured K."""
    ks = ks or DEFAULT_KS
    report: dict = {"conventions": CONVENTIONS_NOTE, "metrics": {}}
    for metric, cutoffs in ks.items():
        fn = _METRIC_FNS[metric]
        for k in cutoffs:
            name = f"{_METRIC_LABEL[metric]}@{k}"
            per_query = {}
            for query_id, ranked in run.rankings.items():
                per_query[query_id] = fn(ranked, qrels.relevant_set(query_id), k)
            mean = sum(per_query.values()) / len(per_query) if per_query else 0.0
            report["metrics"][name] = {"mean": mean, "per_query": per_query}
    return report


def report_table(report: dict) -> str:
    """Aligned plain-text table of metric means."""
    names = list(report["metrics"])
    widths = [max(len(n), 7) for n in names]
    header = "  ".join(n.rjust(w) for n, w in zip(names, widths))
    values = "  ".join(f"{report['metrics'][n]['mean']:.4f}".rjust(w)
                       for n, w in zip(names, widths))
    return f"# {report['conventions']}\n{header}\n{values}"


def save_report(report: dict, path: str | Path) -> None:
    Path(path).write_text(json.dumps(report, indent=2, sort_keys=True))
