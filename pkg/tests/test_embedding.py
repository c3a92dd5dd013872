import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.base import clone

from psif.corpus_io import Corpus, UnigramModel, WordVectorTable, estimate_unigram
from psif.embedding import (
    EmbeddingMatrix,
    MissingTokensError,
    PSIFEmbedder,
    SifParams,
    build_word_topic_table,
    dominant_direction,
    embed_corpus,
    embed_document,
    load_embedding_matrix,
    remove_common_component,
    save_embedding_matrix,
    sif_weight,
)
from psif.partition import PartitionWeights


def reference_doc(doc, table, weights, unigram, a):
    """Loop-by-loop word-topic average, no vectorisation."""
    K, d = weights.K, table.dim
    windex = {t: i for i, t in enumerate(weights.tokens)}
    total = [0.0] * (K * d)
    n = 0
    for w in doc:
        if w not in windex:
            continue
        n += 1
        c = a / (a + unigram.prob(w))
        v = table[w]
        for j in range(K):
            for m in range(d):
                total[j * d + m] += c * weights.weights[windex[w], j] * v[m]
    return np.array(total) / n if n else np.zeros(K * d)


def random_setup(seed, n_words=12, d=3, K=3, n_docs=8):
    rng = np.random.default_rng(seed)
    tokens = tuple(f"w{i}" for i in range(n_words))
    table = WordVectorTable(tokens, rng.standard_normal((n_words, d)))
    weights = PartitionWeights(tokens, rng.standard_normal((n_words, K)) * (rng.random((n_words, K)) < 0.6))
    docs = [tuple(rng.choice(tokens, size=int(rng.integers(1, 9)))) for _ in range(n_docs)]
    unigram = UnigramModel({t: int(rng.integers(1, 20)) for t in tokens})
    return table, weights, docs, unigram


class TestWordTopicTable:
    def test_block_example(self):
        table = WordVectorTable(("w",), np.array([[1.0, 2.0]]))
        tt = build_word_topic_table(table, PartitionWeights(("w",), np.array([[0.0, 4.0, 0.0]])))
        np.testing.assert_array_equal(tt["w"], [0, 0, 4, 8, 0, 0])
        assert (tt.K, tt.d) == (3, 2)

    def test_signed_weights_example(self):
        table = WordVectorTable(("w",), np.array([[1.0, 2.0]]))
        tt = build_word_topic_table(table, PartitionWeights(("w",), np.array([[0.5, -0.25]])))
        np.testing.assert_array_equal(tt["w"], [0.5, 1.0, -0.25, -0.5])

    def test_single_topic_identity_and_zero_weights(self):
        table = WordVectorTable(("w", "z"), np.array([[1.0, 2.0], [3.0, 4.0]]))
        tt = build_word_topic_table(table, PartitionWeights(("w", "z"), np.array([[1.0], [0.0]])))
        np.testing.assert_array_equal(tt["w"], [1.0, 2.0])
        np.testing.assert_array_equal(tt["z"], [0.0, 0.0])

    def test_soft_weights(self):
        table = WordVectorTable(("w",), np.array([[1.0, 2.0]]))
        tt = build_word_topic_table(table, PartitionWeights(("w",), np.array([[0.3, 0.7]])))
        np.testing.assert_allclose(tt["w"], [0.3, 0.6, 0.7, 1.4])

    def test_missing_vectors(self):
        table = WordVectorTable(("w",), np.ones((1, 2)))
        with pytest.raises(MissingTokensError):
            build_word_topic_table(table, PartitionWeights(("w", "x"), np.ones((2, 1))))

    def test_only_weighted_tokens(self, small_table):
        pw = PartitionWeights(small_table.tokens[:5], np.ones((5, 2)))
        tt = build_word_topic_table(small_table, pw)
        assert tt.tokens == small_table.tokens[:5] and tt.vectors.shape == (5, 12)


class TestSifWeight:
    def test_values(self):
        assert sif_weight(0.0) == 1.0
        assert sif_weight(1e-3, 1e-3) == 0.5

    def test_bad_a(self):
        with pytest.raises(ValueError):
            SifParams(a=0.0)


class TestEmbedDocument:
    def test_two_word_example(self):
        table = WordVectorTable(("x", "y"), np.array([[2.0], [4.0]]))
        tt = build_word_topic_table(table, PartitionWeights.ones(table.tokens))
        uni = UnigramModel({"x": 1, "y": 1})
        out = embed_document(("x", "y"), tt, uni, SifParams(a=0.5))
        assert out[0] == pytest.approx((0.5 * 2 + 0.5 * 4) / 2, abs=1e-15)

    def test_frequent_pair_example(self):
        table = WordVectorTable(("w1", "w2"), np.array([[2.0], [4.0]]))
        tt = build_word_topic_table(table, PartitionWeights.ones(table.tokens))
        uni = UnigramModel({"w1": 1, "w2": 1, "filler": 998})  # p(w1) = p(w2) = 1e-3
        out = embed_document(("w1", "w2"), tt, uni, SifParams(a=1e-3))
        np.testing.assert_array_equal(out, [1.5])

    def test_single_unseen_word_and_repetition(self):
        table = WordVectorTable(("w",), np.array([[1.0, -3.0]]))
        tt = build_word_topic_table(table, PartitionWeights(("w",), np.array([[2.0, 0.5]])))
        uni = UnigramModel({"other": 1})  # p(w) = 0, weight 1
        np.testing.assert_array_equal(embed_document(("w",), tt, uni), tt["w"])
        np.testing.assert_array_equal(embed_document(("w", "w"), tt, uni), tt["w"])

    def test_oov_dropped_from_mean(self):
        table = WordVectorTable(("x",), np.array([[2.0]]))
        tt = build_word_topic_table(table, PartitionWeights.ones(table.tokens))
        uni = UnigramModel({"x": 1, "zz": 1})
        p = SifParams(a=0.5)
        np.testing.assert_array_equal(embed_document(("x", "zz"), tt, uni, p), embed_document(("x",), tt, uni, p))

    def test_empty_and_all_oov(self):
        table = WordVectorTable(("x",), np.array([[2.0, 1.0]]))
        tt = build_word_topic_table(table, PartitionWeights(("x",), np.ones((1, 3))))
        uni = UnigramModel({"x": 1})
        np.testing.assert_array_equal(embed_document((), tt, uni), np.zeros(6))
        np.testing.assert_array_equal(embed_document(("q",), tt, uni), np.zeros(6))

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 10**6))
    def test_matches_loop_reference(self, seed):
        table, weights, docs, uni = random_setup(seed)
        tt = build_word_topic_table(table, weights)
        for doc in docs:
            np.testing.assert_allclose(
                embed_document(doc, tt, uni, SifParams(a=0.01)),
                reference_doc(doc, table, weights, uni, 0.01),
                rtol=1e-12, atol=1e-12,
            )

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 10**6))
    def test_block_is_weighted_sif(self, seed):
        table, weights, docs, uni = random_setup(seed)
        tt = build_word_topic_table(table, weights)
        d = table.dim
        for j in range(weights.K):
            scaled = WordVectorTable(table.tokens, table.vectors * weights.weights[:, [j]])
            single = build_word_topic_table(scaled, PartitionWeights.ones(table.tokens))
            for doc in docs:
                block = embed_document(doc, tt, uni)[j * d:(j + 1) * d]
                np.testing.assert_allclose(block, embed_document(doc, single, uni), atol=1e-12)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 10**6))
    def test_token_order_irrelevant(self, seed):
        table, weights, docs, uni = random_setup(seed)
        tt = build_word_topic_table(table, weights)
        rng = np.random.default_rng(seed)
        for doc in docs:
            shuffled = tuple(rng.permutation(doc))
            np.testing.assert_allclose(embed_document(doc, tt, uni), embed_document(shuffled, tt, uni), atol=1e-12)


class TestCommonComponent:
    def test_two_by_two_closed_form(self):
        X = np.array([[1.0, 0.0], [1.0, 1.0]])
        # X^T X = [[2,1],[1,1]]; top eigenvector is (1, x) with x^2 + x - 1 = 0
        x = (np.sqrt(5) - 1) / 2
        expected = np.array([1.0, x]) / np.hypot(1.0, x)
        np.testing.assert_allclose(dominant_direction(X), expected, atol=1e-12)
        out = remove_common_component(EmbeddingMatrix(("a", "b"), X))
        np.testing.assert_allclose(out.vectors @ expected, 0.0, atol=1e-12)

    def test_identical_rows_vanish(self):
        X = np.tile([[1.0, -2.0, 3.0]], (4, 1))
        out = remove_common_component(EmbeddingMatrix(tuple("abcd"), X))
        np.testing.assert_allclose(out.vectors, 0.0, atol=1e-12)

    def test_zero_matrix(self):
        with pytest.raises(ValueError, match="zero matrix"):
            remove_common_component(EmbeddingMatrix(("a",), np.zeros((1, 3))))

    def test_zero_rows_ignored(self):
        X = np.array([[0.0, 0.0], [3.0, 4.0]])
        np.testing.assert_allclose(dominant_direction(X), [0.6, 0.8], atol=1e-12)

    def test_sign_convention(self):
        u = dominant_direction(np.array([[-1.0, -2.0], [-1.1, -2.0]]))
        assert u[0] > 0

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 10**6), st.integers(2, 12), st.integers(1, 8))
    def test_orthogonal_and_idempotent(self, seed, n, d):
        X = np.random.default_rng(seed).standard_normal((n, d))
        out = remove_common_component(EmbeddingMatrix(tuple(map(str, range(n))), X))
        u = out.common_direction
        assert np.linalg.norm(u) == pytest.approx(1.0, abs=1e-12)
        np.testing.assert_allclose(out.vectors @ u, 0.0, atol=1e-10)
        again = remove_common_component(out, u)
        np.testing.assert_allclose(again.vectors, out.vectors, atol=1e-12)

    def test_wrong_length_direction(self):
        with pytest.raises(ValueError):
            remove_common_component(EmbeddingMatrix(("a",), np.ones((1, 3))), np.ones(2))


class TestEmbedCorpus:
    def test_flag_controls_removal(self, small_table):
        table, weights, docs, uni = random_setup(3)
        tt = build_word_topic_table(table, weights)
        raw = embed_corpus(docs, tt, uni, SifParams(remove_component=False))
        assert raw.common_direction is None
        cooked = embed_corpus(docs, tt, uni, SifParams())
        u = cooked.common_direction
        np.testing.assert_allclose(cooked.vectors, raw.vectors - np.outer(raw.vectors @ u, u), atol=1e-12)

    def test_three_document_oracle(self):
        table, weights, docs, uni = random_setup(13, n_docs=3)
        got = embed_corpus(docs, build_word_topic_table(table, weights), uni, SifParams(a=0.01)).vectors
        X = np.array([reference_doc(doc, table, weights, uni, 0.01) for doc in docs])
        u = np.linalg.svd(X)[2][0]
        np.testing.assert_allclose(got, X - np.outer(X @ u, u), atol=1e-12)

    def test_reused_component(self):
        table, weights, docs, uni = random_setup(4)
        tt = build_word_topic_table(table, weights)
        u = embed_corpus(docs, tt, uni).common_direction
        other = embed_corpus(docs[:3], tt, uni, component=u)
        np.testing.assert_array_equal(other.common_direction, u)

    def test_single_topic_ones_is_plain_sif(self):
        table, _, docs, uni = random_setup(5)
        tt = build_word_topic_table(table, PartitionWeights.ones(table.tokens))
        emb = embed_corpus(docs, tt, uni, SifParams(a=0.01, remove_component=False))
        for doc, row in zip(docs, emb.vectors):
            c = np.array([0.01 / (0.01 + uni.prob(w)) for w in doc])
            np.testing.assert_allclose(row, c @ table.vectors[[table.index[w] for w in doc]] / len(doc), atol=1e-12)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10**6), st.floats(0.1, 10.0))
    def test_scale_covariance(self, seed, c):
        table, weights, docs, uni = random_setup(seed)
        base = embed_corpus(docs, build_word_topic_table(table, weights), uni)
        scaled_table = WordVectorTable(table.tokens, c * table.vectors)
        scaled = embed_corpus(docs, build_word_topic_table(scaled_table, weights), uni)
        np.testing.assert_allclose(scaled.vectors, c * base.vectors, atol=1e-9 * max(1.0, c))

    def test_corpus_ids_kept(self):
        table, weights, docs, uni = random_setup(6)
        emb = embed_corpus(Corpus(tuple(docs[:2]), ("x", "y")), build_word_topic_table(table, weights), uni)
        assert emb.ids == ("x", "y")

    def test_empty_document_logged(self, caplog):
        table, weights, docs, uni = random_setup(7)
        tt = build_word_topic_table(table, weights)
        with caplog.at_level(logging.WARNING):
            emb = embed_corpus([docs[0], (), ("nope",)], tt, uni)
        assert "no in-vocabulary tokens" in caplog.text
        np.testing.assert_array_equal(emb.vectors[1:], 0.0)

    def test_save_load_round_trip(self, tmp_path):
        table, weights, docs, uni = random_setup(8)
        emb = embed_corpus(docs, build_word_topic_table(table, weights), uni)
        save_embedding_matrix(tmp_path / "e.tsv", emb)
        back = load_embedding_matrix(tmp_path / "e.tsv")
        assert back.ids == emb.ids and back.vectors.tobytes() == emb.vectors.tobytes()


class TestPSIFEmbedder:
    def test_none_partitioner_is_sif(self):
        table, _, docs, uni = random_setup(9)
        est = PSIFEmbedder(word_vectors=table, partitioner="none", unigram=uni)
        X = est.fit_transform(docs)
        tt = build_word_topic_table(table, PartitionWeights.ones(table.tokens))
        np.testing.assert_allclose(X, embed_corpus(docs, tt, uni).vectors, atol=1e-12)

    def test_transform_reuses_direction(self):
        table, _, docs, _ = random_setup(10)
        est = PSIFEmbedder(word_vectors=table, n_topics=3, sparsity=2, max_iter=3).fit(docs)
        np.testing.assert_allclose(est.transform(docs) @ est.common_direction_, 0.0, atol=1e-10)
        assert est.transform(docs[:2]).shape == (2, 3 * table.dim)

    def test_gmm_and_unigram_from_docs(self):
        table, _, docs, _ = random_setup(11)
        est = PSIFEmbedder(word_vectors=table, partitioner="gmm", n_topics=2, max_iter=5).fit(docs)
        assert est.unigram_.counts == estimate_unigram(docs).counts
        np.testing.assert_allclose(est.weights_.weights.sum(axis=1), 1.0)

    def test_unknown_partitioner(self):
        table, _, docs, _ = random_setup(12)
        with pytest.raises(ValueError):
            PSIFEmbedder(word_vectors=table, partitioner="lda").fit(docs)

    def test_clone(self):
        est = PSIFEmbedder(n_topics=7, a=0.01)
        assert clone(est).get_params()["n_topics"] == 7
