"""TF-IDF features, embedding stores, cosine similarity."""

import math

import numpy as np
import pytest
from sklearn.feature_extraction.text import TfidfVectorizer

from rhskit.errors import InputError
from rhskit.textvec import (
    EmbeddingStore,
    IdfBowEmbedder,
    PrefitEmbedder,
    StoreEmbedder,
    TfidfModel,
    TokenizerConfig,
    cosine_similarity,
    load_precomputed_embeddings,
    make_embedding,
    save_embeddings,
    tokenize,
)

from conftest import make_sentence


class TestTokenize:
    CFG = TokenizerConfig()

    def test_lowercase_alnum_runs(self):
        assert tokenize("Great Value!", self.CFG) == ["great", "value"]

    def test_min_two_chars_drops_singletons(self):
        assert tokenize("a bb c dd", self.CFG) == ["bb", "dd"]

    def test_underscore_is_a_separator(self):
        assert tokenize("snake_case", self.CFG) == ["snake", "case"]

    def test_digits_kept(self):
        assert tokenize("usb 30 cable", self.CFG) == ["usb", "30", "cable"]

    def test_unicode_letters_kept(self):
        assert tokenize("Café com pão", self.CFG) == ["café", "com", "pão"]

    def test_apostrophes_split(self):
        assert tokenize("doesn't work", self.CFG) == ["doesn", "work"]


class TestTfidfModel:
    def test_idf_formula_hand_case(self):
        # Two docs: "aa" in both, "bb" in one.
        # idf(aa) = ln(3/3)+1 = 1, idf(bb) = ln(3/2)+1.
        model = TfidfModel().fit(["aa bb", "aa cc"])
        idf = dict(zip(model.vocabulary_.terms, model.idf_))
        assert idf["aa"] == pytest.approx(1.0, abs=1e-12)
        assert idf["bb"] == pytest.approx(math.log(3 / 2) + 1, abs=1e-12)

    def test_row_l2_normalized(self):
        model = TfidfModel().fit(["aa bb", "aa cc", "dd"])
        matrix = model.transform(["aa bb aa"])
        assert np.linalg.norm(matrix.toarray()) == pytest.approx(1.0, abs=1e-12)

    def test_matches_sklearn_vectorizer(self, rng):
        words = [f"w{i}" for i in range(30)]
        docs = [
            " ".join(rng.choice(words, size=rng.integers(3, 12)))
            for _ in range(40)
        ]
        mine = TfidfModel().fit(docs)
        theirs = TfidfVectorizer(norm="l2", smooth_idf=True, sublinear_tf=False)
        reference = theirs.fit_transform(docs)
        assert list(mine.vocabulary_.terms) == sorted(theirs.vocabulary_)
        np.testing.assert_allclose(
            mine.transform(docs).toarray(), reference.toarray(), atol=1e-9
        )

    def test_document_order_insensitive(self):
        docs = ["aa bb cc", "bb dd", "cc dd ee"]
        a = TfidfModel().fit(docs)
        b = TfidfModel().fit(list(reversed(docs)))
        assert a.vocabulary_.terms == b.vocabulary_.terms
        np.testing.assert_allclose(a.idf_, b.idf_, atol=0)

    def test_unseen_terms_ignored(self):
        model = TfidfModel().fit(["aa bb"])
        row = model.transform(["aa zz qq"]).toarray()
        assert row[0][model.vocabulary_.term_index["aa"]] > 0
        assert np.count_nonzero(row) == 1

    def test_min_df_filters(self):
        model = TfidfModel(min_df=2).fit(["aa bb", "aa cc", "aa bb dd"])
        assert model.vocabulary_.terms == ("aa", "bb")

    def test_max_features_keeps_most_frequent(self):
        model = TfidfModel(max_features=1).fit(["aa bb", "aa cc"])
        assert model.vocabulary_.terms == ("aa",)

    def test_empty_vocabulary_raises(self):
        with pytest.raises(ValueError):
            TfidfModel().fit(["a b c"])  # all tokens below min length

    def test_all_terms_per_doc_counted_with_repeats(self):
        model = TfidfModel().fit(["aa aa bb", "bb cc"])
        row = model.transform(["aa aa bb"]).toarray()[0]
        ia, ib = model.vocabulary_.term_index["aa"], model.vocabulary_.term_index["bb"]
        # aa appears twice, so its unnormalized weight doubles.
        assert row[ia] / row[ib] == pytest.approx(
            2 * model.idf_[ia] / model.idf_[ib], abs=1e-12
        )


class TestEmbeddings:
    def test_make_embedding_records_norm(self):
        e = make_embedding("s1", "generic", np.array([3.0, 4.0]))
        assert e.norm == pytest.approx(5.0)
        assert e.dim == 2

    def test_cosine_identity_and_orthogonal(self):
        a = make_embedding("a", "g", np.array([1.0, 0.0]))
        b = make_embedding("b", "g", np.array([0.0, 2.0]))
        assert cosine_similarity(a, a) == pytest.approx(1.0)
        assert cosine_similarity(a, b) == pytest.approx(0.0)

    def test_cosine_zero_vector_is_zero(self):
        a = make_embedding("a", "g", np.array([0.0, 0.0]))
        b = make_embedding("b", "g", np.array([1.0, 1.0]))
        assert cosine_similarity(a, b) == 0.0

    def test_cosine_space_mismatch_rejected(self):
        a = make_embedding("a", "g1", np.array([1.0]))
        b = make_embedding("b", "g2", np.array([1.0]))
        with pytest.raises(ValueError):
            cosine_similarity(a, b)

    def test_cosine_known_value(self):
        a = make_embedding("a", "g", np.array([1.0, 1.0]))
        b = make_embedding("b", "g", np.array([1.0, 0.0]))
        assert cosine_similarity(a, b) == pytest.approx(1 / math.sqrt(2), abs=1e-12)

    def test_sparse_and_dense_agree(self):
        model = TfidfModel().fit(["aa bb cc", "bb dd", "cc dd"])
        sparse_a, sparse_b = model.embed(["aa bb", "bb dd"])
        dense = [
            make_embedding(e.sentence_id, e.space_id, e.values.toarray().ravel())
            for e in (sparse_a, sparse_b)
        ]
        assert cosine_similarity(sparse_a, sparse_b) == pytest.approx(
            cosine_similarity(*dense), abs=1e-12
        )


class TestEmbeddingFile:
    def test_round_trip_is_exact(self, tmp_path, rng):
        path = tmp_path / "vectors.tsv"
        original = EmbeddingStore(
            "ext", 5, {f"s{i}": rng.normal(size=5) for i in range(4)}
        )
        save_embeddings(original, path)
        store = load_precomputed_embeddings(path, space_id="ext")
        assert store.dim == 5
        for sid, vector in original.vectors.items():
            np.testing.assert_array_equal(store.vectors[sid], vector)

    def test_header_required(self, tmp_path):
        path = tmp_path / "v.tsv"
        path.write_text("s1\t1.0 2.0\n")
        with pytest.raises(InputError):
            load_precomputed_embeddings(path)

    def test_wrong_component_count_rejected(self, tmp_path):
        path = tmp_path / "v.tsv"
        path.write_text("dim=3\ns1\t1.0 2.0\n")
        with pytest.raises(InputError) as err:
            load_precomputed_embeddings(path)
        assert "2" in str(err.value)

    def test_bad_float_rejected_with_line(self, tmp_path):
        path = tmp_path / "v.tsv"
        path.write_text("dim=2\ns1\t1.0 oops\n")
        with pytest.raises(InputError) as err:
            load_precomputed_embeddings(path)
        assert "2" in str(err.value.line_no and str(err.value.line_no))

    def test_duplicate_id_last_wins(self, tmp_path, caplog):
        path = tmp_path / "v.tsv"
        path.write_text("dim=1\ns1\t1.0\ns1\t2.0\n")
        with caplog.at_level("WARNING"):
            store = load_precomputed_embeddings(path)
        assert store.vectors["s1"][0] == 2.0
        assert any("duplicate" in r.message for r in caplog.records)

    def test_store_embedder_missing_id(self):
        store = EmbeddingStore("ext", 2, {"s1": np.zeros(2)})
        embedder = StoreEmbedder(store)
        with pytest.raises(InputError):
            embedder.build([make_sentence("s2")])


class TestEmbedders:
    def test_idf_bow_space_id(self):
        embedder = IdfBowEmbedder()
        sentences = [
            make_sentence("s1", "battery life is great"),
            make_sentence("s2", "battery life is fine"),
            make_sentence("s3", "totally unrelated words here"),
        ]
        embeddings = embedder.build(sentences)
        assert all(e.space_id == "idf-bow" for e in embeddings)
        assert cosine_similarity(embeddings[0], embeddings[1]) > cosine_similarity(
            embeddings[0], embeddings[2]
        )

    def test_prefit_embedder_requires_fit(self):
        with pytest.raises(Exception):
            PrefitEmbedder(TfidfModel()).build([make_sentence()])

    def test_prefit_embedder_uses_model_space(self):
        model = TfidfModel(space_id="tfidf").fit(["aa bb", "bb cc"])
        embeddings = PrefitEmbedder(model).build([make_sentence("s1", "aa bb")])
        assert embeddings[0].space_id == "tfidf"
