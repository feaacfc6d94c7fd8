from __future__ import annotations

import math
from collections import Counter

import pytest
from hypothesis import given
from hypothesis import strategies as st

from multinovelty.errors import InvalidArg
from multinovelty.textops import cosine_sim, ngrams, tfidf_matrix, tokenize

words = st.lists(
    st.text(alphabet="abcdefg", min_size=1, max_size=5), min_size=0, max_size=20
)


class TestTokenize:
    def test_punctuation_discarded(self):
        assert tokenize("True happiness, in life!") == ["true", "happiness", "in", "life"]

    def test_empty(self):
        assert tokenize("") == []

    def test_apostrophe_kept_word_internal(self):
        assert tokenize("don't stop") == ["don't", "stop"]

    def test_leading_trailing_apostrophes_dropped(self):
        assert tokenize("'quoted' rock 'n' roll") == ["quoted", "rock", "n", "roll"]

    def test_unicode_lowercase(self):
        assert tokenize("Über Schnee") == ["über", "schnee"]

    def test_digits_kept(self):
        assert tokenize("route 66 runs") == ["route", "66", "runs"]

    @given(words)
    def test_idempotent_on_joined_output(self, tokens):
        once = tokenize(" ".join(tokens))
        assert tokenize(" ".join(once)) == once


class TestNgrams:
    def test_bigrams(self):
        assert ngrams(["a", "b", "c"], 2) == Counter({("a", "b"): 1, ("b", "c"): 1})

    def test_short_sequence_is_empty(self):
        assert ngrams(["a"], 2) == Counter()

    def test_multiset_counts(self):
        assert ngrams(["a", "a", "a"], 1) == Counter({("a",): 3})

    def test_invalid_n(self):
        with pytest.raises(InvalidArg):
            ngrams(["a"], 0)


class TestTfIdf:
    def test_identical_docs_identical_unit_vectors(self):
        v1, v2 = tfidf_matrix([["a", "b"], ["a", "b"]])
        assert v1 == v2
        assert math.isclose(sum(w * w for w in v1.values()), 1.0, abs_tol=1e-12)

    def test_disjoint_vocab_orthogonal(self):
        v1, v2 = tfidf_matrix([["a"], ["b"]])
        assert cosine_sim(v1, v2) == 0.0
        assert math.isclose(sum(w * w for w in v1.values()), 1.0, abs_tol=1e-12)

    def test_hand_applied_formula(self):
        # Expected weights evaluated directly from the stated formula:
        # tf * (ln((1+N)/(1+df)) + 1), then L2 normalization.
        docs = [["a", "a", "b"], ["a", "c"]]
        idf_a = math.log(3 / 3) + 1.0
        idf_b = math.log(3 / 2) + 1.0
        idf_c = math.log(3 / 2) + 1.0
        raw1 = {"a": 2 * idf_a, "b": 1 * idf_b}
        raw2 = {"a": 1 * idf_a, "c": 1 * idf_c}
        n1 = math.sqrt(sum(w * w for w in raw1.values()))
        n2 = math.sqrt(sum(w * w for w in raw2.values()))
        v1, v2 = tfidf_matrix(docs)
        for term, weight in raw1.items():
            assert v1[term] == pytest.approx(weight / n1, abs=1e-12)
        for term, weight in raw2.items():
            assert v2[term] == pytest.approx(weight / n2, abs=1e-12)

    def test_empty_doc_list_rejected(self):
        with pytest.raises(InvalidArg):
            tfidf_matrix([])

    def test_empty_doc_becomes_zero_vector(self):
        v1, v2 = tfidf_matrix([["a"], []])
        assert v2 == {}
        assert cosine_sim(v1, v2) == 0.0

    @given(st.lists(words, min_size=2, max_size=6))
    def test_nonnegative_so_cosines_in_unit_interval(self, docs):
        vectors = tfidf_matrix(docs)
        for i in range(len(vectors)):
            for j in range(i + 1, len(vectors)):
                sim = cosine_sim(vectors[i], vectors[j])
                assert -1e-12 <= sim <= 1.0 + 1e-12


class TestCosine:
    def test_identical(self):
        assert cosine_sim((1.0, 0.0), (1.0, 0.0)) == pytest.approx(1.0, abs=1e-12)

    def test_orthogonal(self):
        assert cosine_sim((1.0, 0.0), (0.0, 1.0)) == 0.0

    def test_closed_form_inv_sqrt2(self):
        assert cosine_sim((1.0, 1.0), (1.0, 0.0)) == pytest.approx(
            1.0 / math.sqrt(2.0), abs=1e-9
        )

    def test_dimension_mismatch(self):
        with pytest.raises(InvalidArg):
            cosine_sim((1.0, 0.0), (1.0, 0.0, 0.0))

    def test_mixed_kinds_rejected(self):
        with pytest.raises(InvalidArg):
            cosine_sim({"a": 1.0}, (1.0, 0.0))

    def test_zero_norm_defined_as_zero(self):
        assert cosine_sim((0.0, 0.0), (1.0, 0.0)) == 0.0
        assert cosine_sim({}, {"a": 1.0}) == 0.0

    @given(
        st.lists(st.floats(-5, 5), min_size=1, max_size=6),
        st.lists(st.floats(-5, 5), min_size=1, max_size=6),
    )
    def test_symmetric_and_bounded(self, u, v):
        size = min(len(u), len(v))
        u, v = u[:size], v[:size]
        sim = cosine_sim(u, v)
        assert sim == cosine_sim(v, u)
        assert -1.0 - 1e-9 <= sim <= 1.0 + 1e-9

    @given(
        st.lists(
            st.floats(-5, 5).filter(lambda x: x == 0.0 or abs(x) > 1e-100),
            min_size=1,
            max_size=6,
        )
    )
    def test_self_similarity_is_one(self, u):
        if any(x != 0.0 for x in u):
            assert cosine_sim(u, u) == pytest.approx(1.0, abs=1e-12)
