import numpy as np
import pytest

from conftest import make_feature
from squadlab.embeddings import (CharEmbeddingTable, EmbeddingError,
                                 EmbeddingMatrix, PseudoEmbedder,
                                 load_embedding_fixture, pseudo_embed,
                                 save_embedding_fixture)


class TestPseudoEmbed:
    def test_repeatable(self):
        f = make_feature()
        a = pseudo_embed(f, 16, seed=1).matrix
        b = pseudo_embed(f, 16, seed=1).matrix
        assert np.array_equal(a, b)

    def test_seeds_differ_almost_everywhere(self):
        f = make_feature(n_context=10)
        a = pseudo_embed(f, 32, seed=1).matrix
        b = pseudo_embed(f, 32, seed=2).matrix
        assert (a != b).mean() >= 0.99

    def test_same_token_different_positions_differ(self):
        f1 = make_feature()
        f2 = make_feature()
        f2.tokens[7], f2.tokens[8] = f2.tokens[8], f2.tokens[7]
        e1 = pseudo_embed(f1, 16, seed=0).matrix
        e2 = pseudo_embed(f2, 16, seed=0).matrix
        # token w0 sits at position 7 in f1 and position 8 in f2
        assert f1.tokens[7] == f2.tokens[8]
        assert not np.array_equal(e1[7], e2[8])

    def test_shape_and_width(self):
        f = make_feature(n_context=4)
        m = pseudo_embed(f, 24, seed=0)
        assert m.matrix.shape == (len(f.tokens), 24)

    def test_invalid_width(self):
        with pytest.raises(ValueError, match="d_model"):
            PseudoEmbedder(0, seed=1)


class TestCharTable:
    def test_deterministic_and_total(self):
        t1 = CharEmbeddingTable(8, seed=3)
        t2 = CharEmbeddingTable(8, seed=3)
        for ch in "abé中":
            assert np.array_equal(t1.vector(ch), t2.vector(ch))
            assert t1.vector(ch).shape == (8,)


class TestFixtureFile:
    def _matrices(self, seed=0, d_model=16, count=10):
        feats = [make_feature(qid=f"q{i}", n_context=3 + i % 4)
                 for i in range(count)]
        emb = PseudoEmbedder(d_model, seed)
        return feats, [emb.embed(f) for f in feats]

    def test_round_trip_bit_identical(self, tmp_path):
        feats, mats = self._matrices()
        path = tmp_path / "emb.bin"
        save_embedding_fixture(path, mats)
        store = load_embedding_fixture(path)
        assert store.d_model == 16
        for f, m in zip(feats, mats):
            loaded = store.get(f.qid, f.feature_index)
            assert np.array_equal(loaded.matrix, m.matrix)

    def test_missing_key_names_it(self, tmp_path):
        _, mats = self._matrices(count=2)
        path = tmp_path / "emb.bin"
        save_embedding_fixture(path, mats)
        store = load_embedding_fixture(path)
        with pytest.raises(EmbeddingError, match="nope"):
            store.get("nope", 0)

    def test_seq_len_matches_features(self, tmp_path):
        feats, mats = self._matrices(count=3)
        path = tmp_path / "emb.bin"
        save_embedding_fixture(path, mats)
        store = load_embedding_fixture(path)
        for f in feats:
            assert store(f).shape == (len(f.tokens), 16)

    def test_seq_len_mismatch_rejected(self, tmp_path):
        feats, mats = self._matrices(count=1)
        path = tmp_path / "emb.bin"
        save_embedding_fixture(path, mats)
        store = load_embedding_fixture(path)
        feats[0].tokens.append("extra")
        with pytest.raises(EmbeddingError, match="seq_len"):
            store(feats[0])

    def test_width_mismatch_on_save(self, tmp_path):
        mats = [
            EmbeddingMatrix("a", 0, np.zeros((2, 4))),
            EmbeddingMatrix("b", 0, np.zeros((2, 5))),
        ]
        with pytest.raises(ValueError, match="width"):
            save_embedding_fixture(tmp_path / "x.bin", mats)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "junk.bin"
        path.write_bytes(b"XXXX" + b"\x00" * 12)
        with pytest.raises(ValueError, match="magic"):
            load_embedding_fixture(path)
