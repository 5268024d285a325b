"""Demonstration sampling and augmented-prompt assembly.

A prompt is instruction + K worked demonstration pairs + the query +
an output-format directive.  Demonstrations come from the training
split only, picked either uniformly at random or by similarity to the
query ("scaffold" mode): embedding cosine for text queries, Tanimoto
over radius-2 Morgan fingerprints for molecule queries.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass
from importlib import resources
from typing import Protocol, Sequence

import numpy as np

from moltext import smiles as sm
from moltext.dataset import MoleculeRecord
from moltext.embeddings import tokenize_words
from moltext.metrics import tanimoto

__all__ = [
    "Demonstration",
    "AugmentedPrompt",
    "PromptError",
    "sample_random",
    "sample_scaffold_text",
    "sample_scaffold_mol",
    "build_prompt",
    "HashedTfidf",
    "load_template",
    "DEFAULT_BUDGET",
]

DEFAULT_BUDGET = 12000


class PromptError(ValueError):
    """Sampling or assembly contract violation (size, budget, leakage)."""


@dataclass(frozen=True)
class Demonstration:
    pair_id: str
    description: str
    smiles: str
    similarity: float


@dataclass(frozen=True)
class AugmentedPrompt:
    instruction: str
    demonstrations: tuple[Demonstration, ...]
    query: str
    rendered: str


def load_template(name: str) -> str:
    path = resources.files("moltext") / "templates" / f"{name}.txt"
    return path.read_text(encoding="utf-8").strip()


# ------------------------------------------------------------- sampling


def sample_random(
    train: Sequence[MoleculeRecord], k: int, seed: int
) -> list[Demonstration]:
    """k distinct training pairs, uniform without replacement, seeded."""
    if k > len(train):
        raise PromptError(f"k={k} exceeds training size {len(train)}")
    chosen = random.Random(seed).sample(list(train), k)
    return [
        Demonstration(
            pair_id=r.pair_id,
            description=r.description,
            smiles=r.smiles,
            similarity=0.0,
        )
        for r in chosen
    ]


class TextVectorizer(Protocol):
    def vector(self, text: str) -> np.ndarray: ...


class HashedTfidf:
    """Offline text vectorizer: hashed bag-of-words with smoothed IDF.

    Stands in for a hosted embedding service; fit on the training
    descriptions, then each text maps to an L2-normalized d-dimensional
    vector (default 256) by hashing tokens into buckets.
    """

    def __init__(self, dim: int = 256):
        if dim < 2:
            raise ValueError(f"dim must be >= 2, got {dim}")
        self._dim = dim
        self._idf: dict[str, float] = {}
        self._default_idf = 1.0
        self._fitted = False

    @property
    def dim(self) -> int:
        return self._dim

    def fit(self, texts: Sequence[str]) -> "HashedTfidf":
        n = len(texts)
        if n == 0:
            raise ValueError("cannot fit on an empty text list")
        df: dict[str, int] = {}
        for text in texts:
            for tok in set(tokenize_words(text)):
                df[tok] = df.get(tok, 0) + 1
        self._idf = {
            tok: math.log((1 + n) / (1 + count)) + 1.0 for tok, count in df.items()
        }
        self._default_idf = math.log(1 + n) + 1.0
        self._fitted = True
        return self

    def vector(self, text: str) -> np.ndarray:
        if not self._fitted:
            raise ValueError("vectorizer is not fitted")
        vec = np.zeros(self._dim, dtype=np.float64)
        for tok in tokenize_words(text):
            bucket = sm.fnv1a64(tok.encode("utf-8")) % self._dim
            vec[bucket] += self._idf.get(tok, self._default_idf)
        norm = np.linalg.norm(vec)
        return vec / norm if norm > 0 else vec


def _cosine(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.dot(a, b) / (na * nb))


def _top_k(
    train: Sequence[MoleculeRecord], scores: list[float], k: int
) -> list[Demonstration]:
    # descending similarity, corpus order breaks ties
    order = sorted(range(len(train)), key=lambda i: (-scores[i], i))[:k]
    return [
        Demonstration(
            pair_id=train[i].pair_id,
            description=train[i].description,
            smiles=train[i].smiles,
            similarity=scores[i],
        )
        for i in order
    ]


def sample_scaffold_text(
    train: Sequence[MoleculeRecord],
    query_description: str,
    k: int,
    provider: TextVectorizer,
) -> list[Demonstration]:
    """Top-k training pairs by embedding cosine against the query text."""
    if k > len(train):
        raise PromptError(f"k={k} exceeds training size {len(train)}")
    try:
        query_vec = provider.vector(query_description)
    except Exception as err:
        raise PromptError(f"embedding failed for query: {err}") from err
    scores = []
    for r in train:
        try:
            scores.append(_cosine(query_vec, provider.vector(r.description)))
        except Exception as err:
            raise PromptError(f"embedding failed for pair {r.pair_id}: {err}") from err
    return _top_k(train, scores, k)


def sample_scaffold_mol(
    train: Sequence[MoleculeRecord], query_smiles: str, k: int
) -> list[Demonstration]:
    """Top-k training pairs by Tanimoto over radius-2 Morgan fingerprints."""
    if k > len(train):
        raise PromptError(f"k={k} exceeds training size {len(train)}")
    query_fp = sm.morgan_fingerprint(sm.parse_smiles(query_smiles), 2, 2048)
    scores = [
        tanimoto(query_fp, sm.morgan_fingerprint(sm.parse_smiles(r.smiles), 2, 2048))
        for r in train
    ]
    return _top_k(train, scores, k)


# ------------------------------------------------------------- assembly


def _demo_block(demo: Demonstration, direction: str) -> str:
    if direction == "text2mol":
        return f"Description: {demo.description}\nSMILES: {demo.smiles}"
    return f"SMILES: {demo.smiles}\nDescription: {demo.description}"


def _query_block(query: str, direction: str) -> str:
    if direction == "text2mol":
        return f"Description: {query}\nSMILES:"
    return f"SMILES: {query}\nDescription:"


def build_prompt(
    demos: Sequence[Demonstration],
    query: str,
    direction: str,
    r: int = 4,
    budget: int = DEFAULT_BUDGET,
    query_id: str | None = None,
) -> AugmentedPrompt:
    """Assemble the full prompt; demo order is preserved as given.

    Callers pass scaffold demos in ascending similarity so the most
    similar pair sits nearest the query.  With no demos the instruction
    shrinks to its generation sentence (the lead-in about pairs would be
    false for a zero-shot prompt).  query_id arms the leakage guard.
    """
    if direction not in ("text2mol", "mol2text"):
        raise PromptError(f"unknown direction {direction!r}")
    if query_id is not None:
        for demo in demos:
            if demo.pair_id == query_id:
                raise PromptError(
                    f"demonstration {demo.pair_id!r} leaks the query pair"
                )
    instruction = load_template(f"{direction}_instruction")
    if not demos:
        # keep only the generation sentence for zero-shot prompts
        instruction = instruction.split(". ", 1)[1]
    directive = load_template("output_directive").format(r=r)
    blocks = [instruction]
    blocks.extend(_demo_block(d, direction) for d in demos)
    blocks.append(_query_block(query, direction))
    blocks.append(directive)
    rendered = "\n\n".join(blocks)
    if len(rendered) > budget:
        raise PromptError(
            f"rendered prompt is {len(rendered)} characters, budget is {budget}"
        )
    return AugmentedPrompt(
        instruction=instruction,
        demonstrations=tuple(demos),
        query=query,
        rendered=rendered,
    )
