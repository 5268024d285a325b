"""Stub and file-backed embedding provider contracts."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from moltext.embeddings import (
    EmbeddingError,
    EmbeddingMatrix,
    FileEmbedder,
    StubEmbedder,
    embed_tokens,
    read_embedding_file,
    tokenize_words,
    write_embedding_file,
)
from moltext.numcore import ShapeError


class TestTokenize:
    def test_lowercase_and_punctuation_split(self):
        assert tokenize_words("Ethanol, a 2-carbon alcohol.") == [
            "ethanol", "a", "2", "carbon", "alcohol",
        ]

    def test_empty(self):
        assert tokenize_words("  ... ") == []


class TestStubEmbedder:
    def test_shape_and_determinism(self):
        emb = StubEmbedder(dim=8, seed=0)
        a = emb.embed("ethanol molecule")
        b = emb.embed("ethanol molecule")
        assert a.tokens == ("ethanol", "molecule")
        assert a.matrix.shape == (2, 8)
        np.testing.assert_array_equal(a.matrix, b.matrix)

    def test_unit_norms(self):
        emb = StubEmbedder(dim=16, seed=3)
        mat = emb.embed("an acid with three carbon atoms").matrix
        norms = np.linalg.norm(mat, axis=1)
        np.testing.assert_allclose(norms, 1.0, atol=1e-9)

    def test_same_token_differs_by_position(self):
        emb = StubEmbedder(dim=8, seed=0)
        mat = emb.embed("acid acid").matrix
        assert not np.allclose(mat[0], mat[1])

    def test_same_token_same_position_matches_across_texts(self):
        emb = StubEmbedder(dim=8, seed=0)
        a = emb.embed("acid one").matrix[0]
        b = emb.embed("acid two").matrix[0]
        cos = float(np.dot(a, b))
        assert cos == pytest.approx(1.0, abs=1e-12)

    def test_seed_changes_vectors(self):
        a = StubEmbedder(dim=8, seed=0).embed("acid").matrix
        b = StubEmbedder(dim=8, seed=1).embed("acid").matrix
        assert not np.allclose(a, b)

    def test_empty_text_rejected(self):
        with pytest.raises(EmbeddingError, match="no tokens"):
            StubEmbedder(dim=8).embed("!!!")

    def test_tiny_dim_rejected(self):
        with pytest.raises(ValueError, match="dim"):
            StubEmbedder(dim=1)

    @given(st.lists(st.sampled_from(
        ["acid", "ring", "carbon", "ethanol", "ester", "amine"]),
        min_size=1, max_size=12))
    @settings(max_examples=200)
    def test_row_count_matches_tokens(self, words):
        text = " ".join(words)
        emb = StubEmbedder(dim=6, seed=2).embed(text)
        assert emb.matrix.shape == (len(words), 6)
        assert list(emb.tokens) == words


class TestEmbedTokens:
    def test_width_enforced(self):
        with pytest.raises(ShapeError, match="does not match configured d=16"):
            embed_tokens("acid", StubEmbedder(dim=8), d=16)

    def test_passthrough(self):
        emb = embed_tokens("acid ring", StubEmbedder(dim=8, seed=0), d=8)
        assert emb.matrix.shape == (2, 8)


class TestFileEmbedder:
    def _sample(self):
        return StubEmbedder(dim=4, seed=1).embed("three carbon chain")

    def test_round_trip(self, tmp_path):
        emb = self._sample()
        write_embedding_file(tmp_path, "three carbon chain", emb)
        served = FileEmbedder(tmp_path, dim=4).embed("three carbon chain")
        assert served.tokens == emb.tokens
        np.testing.assert_array_equal(served.matrix, emb.matrix)

    def test_missing_file(self, tmp_path):
        with pytest.raises(EmbeddingError, match="no embedding file"):
            FileEmbedder(tmp_path, dim=4).embed("unknown text")

    def test_bad_magic(self, tmp_path):
        emb = self._sample()
        path = write_embedding_file(tmp_path, "three carbon chain", emb)
        path.write_bytes(b"XXXX" + path.read_bytes()[4:])
        with pytest.raises(EmbeddingError, match="not an embedding file"):
            FileEmbedder(tmp_path, dim=4).embed("three carbon chain")

    def test_hash_mismatch_detected(self, tmp_path):
        emb = self._sample()
        path = write_embedding_file(tmp_path, "three carbon chain", emb)
        other = StubEmbedder(dim=4, seed=1).embed("different text")
        other_path = write_embedding_file(tmp_path, "different text", other)
        # serve the wrong payload under this hash's filename
        path.write_bytes(other_path.read_bytes())
        with pytest.raises(EmbeddingError, match="holds hash"):
            FileEmbedder(tmp_path, dim=4).embed("three carbon chain")

    def test_reader_validates_truncation(self, tmp_path):
        emb = self._sample()
        path = write_embedding_file(tmp_path, "three carbon chain", emb)
        blob = path.read_bytes()
        path.write_bytes(blob[: len(blob) // 2])
        with pytest.raises(EmbeddingError, match="truncated"):
            read_embedding_file(path)

    def test_matrix_validation(self):
        with pytest.raises(ShapeError, match="tokens but"):
            EmbeddingMatrix(tokens=("a",), matrix=np.zeros((2, 3)))
