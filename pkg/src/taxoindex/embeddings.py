"""Embedding supply: file-backed tables of precomputed vectors plus a
deterministic synthetic embedder used as a self-contained stand-in for a
language-model encoder.

Every other module obtains vectors only through :class:`EmbeddingProvider`,
keyed by namespaced strings ("doc:<id>", "query:<id>", "topic:<id>",
"phrase:<id>", "text:<sha1>"), so file-backed and synthetic providers are
interchangeable.
"""

from __future__ import annotations

import hashlib
import struct
from pathlib import Path

import numpy as np

from .lexical import tokenize

MAGIC = b"TXEM1"


class EmbeddingFormatError(ValueError):
    """Raised for malformed embedding files."""


class MissingEmbeddingError(KeyError):
    """Raised when a provider cannot supply a requested key."""


class EmbeddingTable:
    """Immutable key -> fixed-dimension vector map."""

    def __init__(self, dim: int, entries: dict[str, np.ndarray]):
        if dim <= 0:
            raise ValueError("dim must be positive")
        self.dim = dim
        self.entries: dict[str, np.ndarray] = {}
        for key, vec in entries.items():
            arr = np.asarray(vec, dtype=np.float64)
            if arr.shape != (dim,):
                raise EmbeddingFormatError(
                    f"vector for key {key!r} has shape {arr.shape}, expected ({dim},)")
            if not np.all(np.isfinite(arr)):
                raise EmbeddingFormatError(f"non-finite value in vector for key {key!r}")
            self.entries[key] = arr

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, key: str) -> bool:
        return key in self.entries

    def get(self, key: str) -> np.ndarray:
        try:
            return self.entries[key]
        except KeyError:
            raise MissingEmbeddingError(key) from None


def load_embeddings(path: str | Path) -> EmbeddingTable:
    """Load the binary table format: magic, u32 count, u32 dim, then per
    entry a u16 key length, the UTF-8 key, and dim little-endian f32 values."""
    path = Path(path)
    data = path.read_bytes()
    if data[:5] != MAGIC:
        raise EmbeddingFormatError(f"{path}: bad magic {data[:5]!r}")
    if len(data) < 13:
        raise EmbeddingFormatError(f"{path}: truncated header")
    count, dim = struct.unpack_from("<II", data, 5)
    if dim == 0:
        raise EmbeddingFormatError(f"{path}: zero dimension in header")
    offset = 13
    entries: dict[str, np.ndarray] = {}
    for _ in range(count):
        if offset + 2 > len(data):
            raise EmbeddingFormatError(f"{path}: truncated entry header")
        (key_len,) = struct.unpack_from("<H", data, offset)
        offset += 2
        key = data[offset:offset + key_len].decode("utf-8")
        offset += key_len
        end = offset + 4 * dim
        if end > len(data):
            raise EmbeddingFormatError(
                f"{path}: row for key {key!r} shorter than dim {dim}")
        vec = np.frombuffer(data, dtype="<f4", count=dim, offset=offset).astype(np.float64)
        offset = end
        if not np.all(np.isfinite(vec)):
            raise EmbeddingFormatError(f"{path}: non-finite value for key {key!r}")
        entries[key] = vec
    if offset != len(data):
        raise EmbeddingFormatError(f"{path}: trailing data after {count} entries")
    return EmbeddingTable(dim, entries)


def save_embeddings(entries: dict[str, np.ndarray], dim: int, path: str | Path) -> None:
    """Write the binary table format; vectors are stored as little-endian f32."""
    path = Path(path)
    chunks = [MAGIC, struct.pack("<II", len(entries), dim)]
    for key, vec in entries.items():
        arr = np.asarray(vec, dtype=np.float64)
        if arr.shape != (dim,):
            raise EmbeddingFormatError(
                f"vector for key {key!r} has shape {arr.shape}, expected ({dim},)")
        key_bytes = key.encode("utf-8")
        if len(key_bytes) > 0xFFFF:
            raise EmbeddingFormatError(f"key too long: {key!r}")
        chunks.append(struct.pack("<H", len(key_bytes)))
        chunks.append(key_bytes)
        chunks.append(arr.astype("<f4").tobytes())
    path.write_bytes(b"".join(chunks))


def synth_embed(text: str, dim: int, seed: int) -> np.ndarray:
    """Deterministic text embedding: the L2-normalized sum of one
    hash-seeded unit vector per token.

    Texts sharing tokens get correlated vectors, which is all the neural
    add-on needs from a backbone stand-in.
    """
    if dim < 2:
        raise ValueError("dim must be at least 2")
    tokens = tokenize(text)
    if not tokens:
        raise ValueError("cannot embed empty text")
    total = np.zeros(dim, dtype=np.float64)
    for token in tokens:
        digest = hashlib.sha256(f"{seed}:{token}".encode("utf-8")).digest()
        rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
        vec = rng.standard_normal(dim)
        total += vec / np.linalg.norm(vec)
    norm = np.linalg.norm(total)
    if norm == 0.0:
        # Astronomically unlikely token cancellation; perturb deterministically.
        total[0] = 1.0
        norm = 1.0
    return total / norm


def text_key(text: str) -> str:
    """Provider key for an ad-hoc string (live or expanded queries)."""
    return "text:" + hashlib.sha1(text.encode("utf-8")).hexdigest()


class EmbeddingProvider:
    """Common interface: look a vector up by key, with the source text on
    hand for providers that can embed on demand."""

    dim: int

    def vector(self, key: str, text: str | None = None) -> np.ndarray:
        raise NotImplementedError


class TableEmbeddingProvider(EmbeddingProvider):
    """Serves precomputed vectors only; unknown keys are an error."""

    def __init__(self, table: EmbeddingTable):
        self.table = table
        self.dim = table.dim

    def vector(self, key: str, text: str | None = None) -> np.ndarray:
        return self.table.get(key)


class SyntheticEmbeddingProvider(EmbeddingProvider):
    """Embeds texts on demand with :func:`synth_embed`, caching per key."""

    def __init__(self, dim: int, seed: int):
        self.dim = dim
        self.seed = seed
        self._cache: dict[str, np.ndarray] = {}

    def vector(self, key: str, text: str | None = None) -> np.ndarray:
        if key in self._cache:
            return self._cache[key]
        if text is None:
            raise MissingEmbeddingError(key)
        vec = synth_embed(text, self.dim, self.seed)
        self._cache[key] = vec
        return vec
