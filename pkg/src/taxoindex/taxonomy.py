"""Topic taxonomy: loading, subtree-aware document-topic similarity,
top-down candidate traversal, score-based filtering, and tailoring the
tree to the topics a corpus actually uses.
"""

from __future__ import annotations

import json
import statistics
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .embeddings import EmbeddingProvider


class TaxonomyError(ValueError):
    """Raised for structurally invalid taxonomies or unknown nodes."""


@dataclass
class TaxonomyNode:
    id: str
    name: str
    parent: str | None
    children: list[str] = field(default_factory=list)


class Taxonomy:
    """Rooted tree of named topic nodes.

    ``levels`` follows the convention that the root is level 0. Children
    lists are kept sorted by id so every traversal is deterministic.
    """

    def __init__(self, nodes: dict[str, TaxonomyNode]):
        roots = [n.id for n in nodes.values() if n.parent is None]
        if not roots:
            raise TaxonomyError("no root node (every node has a parent)")
        if len(roots) > 1:
            raise TaxonomyError(f"multiple roots: {sorted(roots)}")
        self.root = roots[0]
        self.nodes = nodes
        for node in nodes.values():
            if node.parent is not None and node.parent not in nodes:
                raise TaxonomyError(
                    f"node {node.id!r} has dangling parent {node.parent!r}")
            node.children = sorted(node.children)
        self.levels: dict[str, int] = {self.root: 0}
        order = [self.root]
        for nid in order:
            for child in nodes[nid].children:
                self.levels[child] = self.levels[nid] + 1
                order.append(child)
        if len(order) != len(nodes):
            unreachable = sorted(set(nodes) - set(order))[:5]
            raise TaxonomyError(f"cycle detected (unreachable nodes: {unreachable})")
        # Breadth-first order with ties broken by id: the canonical node order.
        self.bfs_order: list[str] = sorted(nodes, key=lambda n: (self.levels[n], n))

    def __len__(self) -> int:
        return len(self.nodes)

    def __contains__(self, node_id: str) -> bool:
        return node_id in self.nodes

    def node(self, node_id: str) -> TaxonomyNode:
        try:
            return self.nodes[node_id]
        except KeyError:
            raise TaxonomyError(f"unknown node {node_id!r}") from None

    def name(self, node_id: str) -> str:
        return self.node(node_id).name

    def ancestors(self, node_id: str) -> list[str]:
        """Strict ancestors, nearest first."""
        out = []
        parent = self.node(node_id).parent
        while parent is not None:
            out.append(parent)
            parent = self.nodes[parent].parent
        return out

    def max_depth(self) -> int:
        return max(self.levels.values())

    def edges(self) -> list[tuple[str, str]]:
        """Parent-child edges in canonical order."""
        return [(n.parent, n.id) for nid in self.bfs_order
                if (n := self.nodes[nid]).parent is not None]


def load_taxonomy(path: str | Path) -> Taxonomy:
    """Load a JSONL taxonomy file: one node per line with id, name, parent."""
    path = Path(path)
    nodes: dict[str, TaxonomyNode] = {}
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                node = TaxonomyNode(id=str(obj["id"]), name=str(obj["name"]),
                                    parent=None if obj["parent"] is None else str(obj["parent"]))
            except (json.JSONDecodeError, KeyError) as exc:
                raise TaxonomyError(f"{path}:{lineno}: bad node record ({exc})") from exc
            if node.id in nodes:
                raise TaxonomyError(f"{path}:{lineno}: duplicate node id {node.id!r}")
            nodes[node.id] = node
    for node in nodes.values():
        if node.parent is not None:
            if node.parent not in nodes:
                raise TaxonomyError(f"node {node.id!r} has dangling parent {node.parent!r}")
            nodes[node.parent].children.append(node.id)
    return Taxonomy(nodes)


def save_taxonomy(tax: Taxonomy, path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for nid in tax.bfs_order:
            node = tax.nodes[nid]
            fh.write(json.dumps({"id": node.id, "name": node.name,
                                 "parent": node.parent}) + "\n")


def subtree_nodes(tax: Taxonomy, node_id: str) -> set[str]:
    """All descendants of a node, including the node itself."""
    tax.node(node_id)
    out = set()
    stack = [node_id]
    while stack:
        nid = stack.pop()
        out.add(nid)
        stack.extend(tax.nodes[nid].children)
    return out


class SubtreeScorer:
    """Per-document topic similarities, memoized over subtrees.

    A topic's similarity to a document is the mean cosine between the
    document vector and every node vector in the topic's subtree. Means
    decompose into subtree sums, so one cosine pass over all nodes plus a
    reverse-BFS accumulation yields every topic's score in O(nodes).
    """

    def __init__(self, tax: Taxonomy, provider: EmbeddingProvider):
        self.tax = tax
        self.order = tax.bfs_order
        self._index = {nid: i for i, nid in enumerate(self.order)}
        mat = np.stack([provider.vector(f"topic:{nid}", text=tax.name(nid))
                        for nid in self.order])
        norms = np.linalg.norm(mat, axis=1)
        zero = np.nonzero(norms == 0.0)[0]
        if zero.size:
            raise TaxonomyError(f"zero-norm embedding for node {self.order[zero[0]]!r}")
        self._unit = mat / norms[:, None]
        sizes = np.ones(len(self.order), dtype=np.int64)
        for i in range(len(self.order) - 1, 0, -1):
            parent = tax.nodes[self.order[i]].parent
            sizes[self._index[parent]] += sizes[i]
        self._subtree_size = sizes

    def all_similarities(self, doc_emb: np.ndarray) -> dict[str, float]:
        """Subtree-mean cosine similarity of every node to one document."""
        norm = np.linalg.norm(doc_emb)
        if norm == 0.0:
            raise TaxonomyError("zero-norm document embedding")
        cos = self._unit @ (np.asarray(doc_emb, dtype=np.float64) / norm)
        sums = cos.copy()
        for i in range(len(self.order) - 1, 0, -1):
            parent = self.tax.nodes[self.order[i]].parent
            sums[self._index[parent]] += sums[i]
        means = sums / self._subtree_size
        return {nid: float(means[self._index[nid]]) for nid in self.order}


def doc_topic_similarity(doc_emb: np.ndarray, node_id: str, tax: Taxonomy,
                         provider: EmbeddingProvider) -> float:
    """Mean cosine between a document vector and each node vector in the
    subtree rooted at ``node_id``."""
    members = sorted(subtree_nodes(tax, node_id))
    doc = np.asarray(doc_emb, dtype=np.float64)
    doc_norm = np.linalg.norm(doc)
    if doc_norm == 0.0:
        raise TaxonomyError("zero-norm document embedding")
    total = 0.0
    for nid in members:
        vec = provider.vector(f"topic:{nid}", text=tax.name(nid))
        norm = np.linalg.norm(vec)
        if norm == 0.0:
            raise TaxonomyError(f"zero-norm embedding for node {nid!r}")
        total += float(np.dot(doc, vec) / (doc_norm * norm))
    return total / len(members)


@dataclass
class CandidateSet:
    doc_id: str
    candidates: set[str]
    sims: dict[str, float]


def candidate_topics(doc_emb: np.ndarray, tax: Taxonomy,
                     provider: EmbeddingProvider,
                     doc_id: str = "",
                     scorer: SubtreeScorer | None = None) -> CandidateSet:
    """Top-down traversal: starting at the root, every visited node at
    level l expands its min(l + 2, #children) highest-similarity children
    until all paths reach leaves. Candidates are all visited nodes except
    the root. Ties at equal similarity go to the lower node id.
    """
    if not tax.nodes[tax.root].children:
        raise TaxonomyError("taxonomy root has no children")
    scorer = scorer or SubtreeScorer(tax, provider)
    sims = scorer.all_similarities(doc_emb)
    visited: list[str] = []
    frontier = [tax.root]
    while frontier:
        nid = frontier.pop()
        level = tax.levels[nid]
        children = tax.nodes[nid].children
        if not children:
            continue
        fan_out = min(level + 2, len(children))
        picked = sorted(children, key=lambda c: (-sims[c], c))[:fan_out]
        visited.extend(picked)
        frontier.extend(picked)
    candidates = set(visited)
    return CandidateSet(doc_id=doc_id, candidates=candidates,
                        sims={nid: sims[nid] for nid in candidates})


@dataclass(frozen=True)
class FilterPolicy:
    """Core-topic filtering rule.

    ``absolute`` keeps candidates with similarity >= tau; ``median`` keeps
    candidates strictly above their topic's corpus-wide median similarity.
    """

    mode: str = "median"
    tau: float = 0.0
    medians: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.mode not in ("absolute", "median"):
            raise ValueError(f"unknown filter mode {self.mode!r}")


def compute_topic_medians(candidate_sets: list[CandidateSet]) -> dict[str, float]:
    """Per-topic median of candidate similarities across the corpus."""
    by_topic: dict[str, list[float]] = {}
    for cand in candidate_sets:
        for nid, sim in cand.sims.items():
            by_topic.setdefault(nid, []).append(sim)
    return {nid: statistics.median(vals) for nid, vals in by_topic.items()}


def score_filter(cand: CandidateSet, policy: FilterPolicy) -> set[str]:
    """Apply the filtering policy; never returns an empty set for a
    non-empty candidate set (falls back to the single best candidate)."""
    if not cand.candidates:
        return set()
    if policy.mode == "absolute":
        kept = {nid for nid in cand.candidates if cand.sims[nid] >= policy.tau}
    else:
        kept = {nid for nid in cand.candidates
                if cand.sims[nid] > policy.medians.get(nid, float("inf"))}
    if not kept:
        best = min(cand.candidates, key=lambda nid: (-cand.sims[nid], nid))
        kept = {best}
    return kept


class TailoredTaxonomy(Taxonomy):
    """Taxonomy restricted to topics selected as core at least once plus
    their ancestors, with dense class indices in (level, id) order."""

    def __init__(self, nodes: dict[str, TaxonomyNode]):
        super().__init__(nodes)
        self.node_index: dict[str, int] = {nid: i for i, nid in enumerate(self.bfs_order)}

    @property
    def num_topics(self) -> int:
        return len(self.node_index)


def tailor_taxonomy(tax: Taxonomy, core_sets: dict[str, set[str]]) -> TailoredTaxonomy:
    """Restrict the taxonomy to topics used by the corpus."""
    selected: set[str] = set()
    for doc_id, topics in core_sets.items():
        for nid in topics:
            if nid not in tax:
                raise TaxonomyError(f"unknown topic {nid!r} in core set of {doc_id!r}")
        selected.update(topics)
    if not selected:
        raise TaxonomyError("no core topics selected")
    keep = set(selected)
    for nid in selected:
        keep.update(tax.ancestors(nid))
    nodes = {nid: TaxonomyNode(id=nid, name=tax.name(nid), parent=tax.nodes[nid].parent)
             for nid in keep}
    for nid, node in nodes.items():
        if node.parent is not None:
            nodes[node.parent].children.append(nid)
    return TailoredTaxonomy(nodes)


def save_index_map(tailored: TailoredTaxonomy, path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for nid in tailored.bfs_order:
            fh.write(json.dumps({"id": nid, "index": tailored.node_index[nid]}) + "\n")


def load_tailored_taxonomy(tax_path: str | Path, index_path: str | Path) -> TailoredTaxonomy:
    base = load_taxonomy(tax_path)
    tailored = TailoredTaxonomy(base.nodes)
    with Path(index_path).open(encoding="utf-8") as fh:
        stored = {str(obj["id"]): int(obj["index"])
                  for obj in (json.loads(line) for line in fh if line.strip())}
    if stored != tailored.node_index:
        raise TaxonomyError("index map does not match taxonomy node order")
    return tailored
