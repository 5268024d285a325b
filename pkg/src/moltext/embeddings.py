"""Token embedding providers.

The pipeline consumes per-token embedding matrices through a small
provider interface so a fine-tuned language model can be slotted in
later.  Two providers ship: a deterministic stub (hash-seeded base
vector per surface form plus a positional sinusoid) and a file-backed
provider reading precomputed matrices, one file per text, keyed by the
text's SHA-256.
"""

from __future__ import annotations

import hashlib
import re
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol

import numpy as np

from moltext.numcore import ShapeError
from moltext.smiles import fnv1a64

__all__ = [
    "EmbeddingMatrix",
    "EmbeddingError",
    "TokenEmbedder",
    "StubEmbedder",
    "FileEmbedder",
    "embed_tokens",
    "tokenize_words",
    "write_embedding_file",
    "read_embedding_file",
]

_EMB_MAGIC = b"MTEB"


class EmbeddingError(ValueError):
    """Raised for empty token lists and malformed embedding files."""


@dataclass(frozen=True)
class EmbeddingMatrix:
    tokens: tuple[str, ...]
    matrix: np.ndarray  # m x d, float64

    def __post_init__(self):
        if self.matrix.ndim != 2:
            raise ShapeError(f"embedding matrix must be 2-D, got {self.matrix.ndim}-D")
        if len(self.tokens) != self.matrix.shape[0]:
            raise ShapeError(
                f"{len(self.tokens)} tokens but {self.matrix.shape[0]} matrix rows"
            )
        if len(self.tokens) < 1:
            raise EmbeddingError("embedding matrix needs at least one token")
        if not np.all(np.isfinite(self.matrix)):
            raise ValueError("embedding matrix contains non-finite entries")

    @property
    def dim(self) -> int:
        return int(self.matrix.shape[1])


def tokenize_words(text: str) -> list[str]:
    """Lowercase word tokens, splitting on whitespace and punctuation."""
    return re.findall(r"[a-z0-9]+", text.lower())


class TokenEmbedder(Protocol):
    @property
    def dim(self) -> int: ...

    def embed(self, text: str) -> EmbeddingMatrix: ...


def _positional_row(position: int, d: int) -> np.ndarray:
    row = np.empty(d, dtype=np.float64)
    half = (d + 1) // 2
    exponents = np.arange(half, dtype=np.float64) * 2.0 / d
    freqs = 1.0 / np.power(10000.0, exponents)
    angles = position * freqs
    row[0::2] = np.sin(angles)
    row[1::2] = np.cos(angles[: d // 2])
    return row


class StubEmbedder:
    """Deterministic stand-in for a fine-tuned text encoder.

    Each token's vector is a hash-seeded gaussian base (so the same
    surface form always starts identical) plus a sinusoidal positional
    term (so repeated tokens differ by position), then L2-normalized.
    """

    def __init__(self, dim: int = 64, seed: int = 0):
        if dim < 2:
            raise ValueError(f"dim must be >= 2, got {dim}")
        self._dim = dim
        self._seed = seed

    @property
    def dim(self) -> int:
        return self._dim

    def embed(self, text: str) -> EmbeddingMatrix:
        tokens = tokenize_words(text)
        if not tokens:
            raise EmbeddingError(f"no tokens after tokenization: {text!r}")
        rows = np.empty((len(tokens), self._dim), dtype=np.float64)
        for i, tok in enumerate(tokens):
            rng = np.random.default_rng((self._seed, fnv1a64(tok.encode("utf-8"))))
            vec = rng.standard_normal(self._dim) + _positional_row(i, self._dim)
            norm = np.linalg.norm(vec)
            rows[i] = vec / norm if norm > 0 else vec
        return EmbeddingMatrix(tokens=tuple(tokens), matrix=rows)


def _text_key(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def write_embedding_file(directory: str | Path, text: str, emb: EmbeddingMatrix) -> Path:
    """Store one text's embedding matrix under the directory, hash-keyed."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    m, d = emb.matrix.shape
    out = directory / f"{digest.hex()}.emb"
    parts = [_EMB_MAGIC, digest, struct.pack("<2I", m, d)]
    parts.append(np.ascontiguousarray(emb.matrix, dtype="<f8").tobytes())
    for tok in emb.tokens:
        raw = tok.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)) + raw)
    out.write_bytes(b"".join(parts))
    return out


def read_embedding_file(path: str | Path) -> tuple[bytes, EmbeddingMatrix]:
    blob = Path(path).read_bytes()
    if blob[:4] != _EMB_MAGIC:
        raise EmbeddingError(f"not an embedding file: {path}")
    digest = blob[4:36]
    if len(digest) != 32:
        raise EmbeddingError(f"truncated embedding file: {path}")
    m, d = struct.unpack_from("<2I", blob, 36)
    offset = 44
    need = m * d * 8
    if len(blob) < offset + need:
        raise EmbeddingError(f"truncated embedding file: {path}")
    matrix = np.frombuffer(blob, dtype="<f8", count=m * d, offset=offset)
    matrix = matrix.reshape(m, d).astype(np.float64)
    offset += need
    tokens = []
    for _ in range(m):
        (tlen,) = struct.unpack_from("<H", blob, offset)
        offset += 2
        tokens.append(blob[offset : offset + tlen].decode("utf-8"))
        offset += tlen
    return digest, EmbeddingMatrix(tokens=tuple(tokens), matrix=matrix)


class FileEmbedder:
    """Serves precomputed embedding matrices from a hash-keyed directory.

    Files are read once and cached immutably, so concurrent reads are
    safe.  A text with no file present is an error naming the hash so
    the missing entry can be generated externally.
    """

    def __init__(self, directory: str | Path, dim: int):
        self._directory = Path(directory)
        self._dim = dim
        self._cache: dict[str, EmbeddingMatrix] = {}

    @property
    def dim(self) -> int:
        return self._dim

    def embed(self, text: str) -> EmbeddingMatrix:
        key = _text_key(text)
        if key in self._cache:
            return self._cache[key]
        path = self._directory / f"{key}.emb"
        if not path.exists():
            raise EmbeddingError(f"no embedding file for text hash {key}")
        digest, emb = read_embedding_file(path)
        if digest.hex() != key:
            raise EmbeddingError(
                f"embedding file {path.name} holds hash {digest.hex()}"
            )
        self._cache[key] = emb
        return emb


def embed_tokens(text: str, provider: TokenEmbedder, d: int) -> EmbeddingMatrix:
    """Fetch per-token embeddings and enforce the configured width."""
    emb = provider.embed(text)
    if emb.dim != d:
        raise ShapeError(f"provider dimension {emb.dim} does not match configured d={d}")
    return emb
