"""Artifact directory management: every pipeline stage writes its outputs
into one data directory and stamps them into a manifest, so a later stage
(or the service) can refuse to load artifacts from mixed builds.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .addon import AddonConfig, ParameterSet, load_checkpoint
from .concept_index import (
    ForwardIndexRecord,
    PhraseCatalog,
    load_forward_index,
    load_phrase_catalog,
)
from .embeddings import (
    EmbeddingProvider,
    SyntheticEmbeddingProvider,
    TableEmbeddingProvider,
    load_embeddings,
    save_embeddings,
)
from .lexical import Corpus, load_corpus
from .retrieval import SearchEngine
from .taxonomy import TailoredTaxonomy, load_tailored_taxonomy
from .training import AddonInputs, LabelSpace

MANIFEST_NAME = "MANIFEST.json"

CORPUS_FILE = "corpus.jsonl"
TAXONOMY_FILE = "taxonomy.jsonl"
PHRASES_FILE = "phrases.jsonl"
FORWARD_INDEX_FILE = "forward_index.jsonl"
TAILORED_FILE = "tailored_taxonomy.jsonl"
INDEX_MAP_FILE = "taxonomy_index.jsonl"
CHECKPOINT_STEM = "checkpoint"
FUSED_FILE = "fused.bin"
PREDICTIONS_FILE = "predictions.jsonl"

INDEX_ARTIFACTS = [FORWARD_INDEX_FILE, TAILORED_FILE, INDEX_MAP_FILE]
ENGINE_ARTIFACTS = INDEX_ARTIFACTS + [f"{CHECKPOINT_STEM}.json",
                                      f"{CHECKPOINT_STEM}.bin",
                                      FUSED_FILE, PREDICTIONS_FILE]


class ArtifactError(RuntimeError):
    """Raised when artifacts are missing, corrupt, or from mixed builds."""


def file_sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with path.open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _load_manifest(data_dir: Path) -> dict:
    path = data_dir / MANIFEST_NAME
    if not path.exists():
        return {"files": {}}
    return json.loads(path.read_text())


def update_manifest(data_dir: str | Path, filenames: list[str]) -> str:
    """Record content hashes for the given artifact files and refresh the
    overall build hash. Returns the new build hash."""
    data_dir = Path(data_dir)
    manifest = _load_manifest(data_dir)
    for name in filenames:
        path = data_dir / name
        if not path.exists():
            raise ArtifactError(f"cannot stamp missing artifact {name!r}")
        manifest["files"][name] = file_sha256(path)
    digest = hashlib.sha256()
    for name in sorted(manifest["files"]):
        digest.update(f"{name}:{manifest['files'][name]}\n".encode())
    manifest["build_hash"] = digest.hexdigest()
    (data_dir / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2,
                                                     sort_keys=True))
    return manifest["build_hash"]


def verify_manifest(data_dir: str | Path, required: list[str]) -> dict:
    """Check that every required artifact exists and matches its recorded
    hash; reject anything touched or swapped since it was stamped."""
    data_dir = Path(data_dir)
    manifest = _load_manifest(data_dir)
    for name in required:
        path = data_dir / name
        if not path.exists():
            raise ArtifactError(f"missing artifact {name!r} in {data_dir}")
        recorded = manifest["files"].get(name)
        if recorded is None:
            raise ArtifactError(f"artifact {name!r} is not stamped in the manifest")
        actual = file_sha256(path)
        if actual != recorded:
            raise ArtifactError(
                f"artifact {name!r} does not match the manifest (mixed builds?)")
    return manifest


def index_build_hash(data_dir: str | Path) -> str:
    """Hash over the semantic-index artifacts; training stamps it into the
    checkpoint so an engine can refuse checkpoints from another index."""
    data_dir = Path(data_dir)
    digest = hashlib.sha256()
    for name in INDEX_ARTIFACTS:
        digest.update(file_sha256(data_dir / name).encode())
    return digest.hexdigest()


@dataclass
class ProviderConfig:
    mode: str = "synthetic"  # "synthetic" or "file"
    dim: int = 64
    seed: int = 7
    path: str = "embeddings.bin"

    def build(self, data_dir: Path) -> EmbeddingProvider:
        if self.mode == "synthetic":
            return SyntheticEmbeddingProvider(dim=self.dim, seed=self.seed)
        if self.mode == "file":
            return TableEmbeddingProvider(load_embeddings(data_dir / self.path))
        raise ArtifactError(f"unknown embedding provider mode {self.mode!r}")


def save_predictions(predictions: dict[str, list[tuple[int, float]]],
                     path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for doc_id in sorted(predictions):
            fh.write(json.dumps({"doc_id": doc_id,
                                 "topic_probs_topk": [[i, p] for i, p
                                                      in predictions[doc_id]]}) + "\n")


def load_predictions(path: str | Path) -> dict[str, list[tuple[int, float]]]:
    predictions: dict[str, list[tuple[int, float]]] = {}
    path = Path(path)
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                predictions[str(obj["doc_id"])] = [(int(i), float(p))
                                                   for i, p in obj["topic_probs_topk"]]
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ArtifactError(f"{path}:{lineno}: bad prediction record "
                                    f"({exc})") from exc
    return predictions


def save_fused(fused: dict[str, np.ndarray], dim: int, path: str | Path) -> None:
    save_embeddings({f"fused:{doc_id}": vec for doc_id, vec in sorted(fused.items())},
                    dim, path)


def load_fused(path: str | Path) -> dict[str, np.ndarray]:
    table = load_embeddings(path)
    fused = {}
    for key, vec in table.entries.items():
        if not key.startswith("fused:"):
            raise ArtifactError(f"unexpected key {key!r} in fused embedding file")
        fused[key[len("fused:"):]] = vec
    return fused


def load_engine(data_dir: str | Path, provider_config: ProviderConfig) -> SearchEngine:
    """Assemble the full inference state from a data directory, verifying
    that every artifact belongs to the same build."""
    data_dir = Path(data_dir)
    verify_manifest(data_dir, ENGINE_ARTIFACTS)
    corpus = load_corpus(data_dir / CORPUS_FILE)
    tailored = load_tailored_taxonomy(data_dir / TAILORED_FILE,
                                      data_dir / INDEX_MAP_FILE)
    records = load_forward_index(data_dir / FORWARD_INDEX_FILE)
    catalog = load_phrase_catalog(data_dir / PHRASES_FILE)
    params, ckpt_hash = load_checkpoint(data_dir / CHECKPOINT_STEM)
    expected = index_build_hash(data_dir)
    if ckpt_hash is not None and ckpt_hash != expected:
        raise ArtifactError("checkpoint was trained against a different index build")
    provider = provider_config.build(data_dir)
    space = LabelSpace.build(tailored, catalog)
    config = params.config
    if (config.num_topics, config.num_phrases) != (space.num_topics, space.num_phrases):
        raise ArtifactError(
            f"checkpoint classes ({config.num_topics} topics, "
            f"{config.num_phrases} phrases) do not match the index "
            f"({space.num_topics} topics, {space.num_phrases} phrases)")
    if provider.dim != config.dim:
        raise ArtifactError(f"provider dimension {provider.dim} does not match "
                            f"checkpoint dimension {config.dim}")
    inputs = AddonInputs.build(tailored, catalog, provider, space)
    fused = load_fused(data_dir / FUSED_FILE)
    predictions = load_predictions(data_dir / PREDICTIONS_FILE)
    missing = set(corpus.ids()) - set(fused)
    if missing:
        raise ArtifactError(f"fused embeddings missing for {sorted(missing)[:3]}")
    return SearchEngine(corpus=corpus, records=records, tailored=tailored,
                        catalog=catalog, space=space, params=params,
                        addon_config=config, inputs=inputs, provider=provider,
                        fused=fused, doc_predictions=predictions)
