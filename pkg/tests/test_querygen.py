import math
import random

import pytest
from hypothesis import given, strategies as st

from ramt.corpus import split_from_lists
from ramt.querygen import (
    IdfTable, compute_idf, default_stopwords, dump_queries, extract_keywords,
    generate_queries, load_queries, queries_for_split,
)

from .oracles import keyword_oracle


def test_idf_examples():
    assert compute_idf([["a", "b"]]).idf("a") == pytest.approx(1.0, abs=1e-12)
    two_same = compute_idf([["a"], ["a"]])
    assert two_same.df["a"] == 2 and two_same.idf("a") == pytest.approx(1.0, abs=1e-12)
    assert compute_idf([["a"], ["b"]]).idf("a") == pytest.approx(1.405465, abs=1e-6)


def test_idf_empty_split():
    with pytest.raises(ValueError):
        compute_idf([])


def test_idf_invariants():
    docs = [["a", "b", "a"], ["b"], ["c", "a"]]
    t = compute_idf(docs)
    for term, df in t.df.items():
        assert 1 <= df <= t.doc_count
        assert t.idf(term) == pytest.approx(math.log((1 + 3) / (1 + df)) + 1)
        assert t.idf(term) > 0


def test_all_stopwords():
    assert extract_keywords(["the", "the", "the"], IdfTable(1, {"the": 1}), 3) == []


def test_tie_goes_to_earlier_position():
    idf = IdfTable(1, {"dog": 1, "runs": 1})
    assert [k.term for k in extract_keywords(["dog", "runs"], idf, 1)] == ["dog"]


def test_tf_ranking():
    idf = IdfTable(1, {"snow": 1, "dog": 1})
    kws = extract_keywords(["snow", "dog", "snow"], idf, 2)
    assert [k.term for k in kws] == ["snow", "dog"]
    assert kws[0].score == pytest.approx(2 / 3) and kws[1].score == pytest.approx(1 / 3)
    assert kws[0].first_position == 0 and kws[1].first_position == 1


def test_generate_queries():
    idf = IdfTable(1, {})
    five = extract_keywords(["alpha", "beta", "gamma", "delta", "eps"], idf, 5)
    qs = generate_queries(five, 5)
    assert [q.rank for q in qs] == [1, 2, 3, 4, 5]
    assert [q.terms for q in qs] == [("alpha",), ("beta",), ("gamma",), ("delta",), ("eps",)]
    two = extract_keywords(["snow", "dog", "snow"], idf, 3)
    assert [q.terms[0] for q in generate_queries(two, 3)] == ["snow", "dog", "snow"]
    assert [q.terms for q in generate_queries([], 5, ["the"])] == [("the",)] * 5
    with pytest.raises(ValueError):
        generate_queries([], 5, [])


VOCAB = ["the", "a", "dog", "snow", "runs", "cat", "red", "of", ".", ","]


@given(st.lists(st.lists(st.sampled_from(VOCAB), min_size=1, max_size=10), min_size=1, max_size=8), st.integers(1, 6))
def test_keywords_match_oracle(docs, m):
    idf = compute_idf(docs)
    stop = default_stopwords()
    for doc in docs:
        got = [k.term for k in extract_keywords(doc, idf, m)]
        assert got == keyword_oracle(doc, idf.df, idf.doc_count, stop, m)
        assert len(generate_queries(extract_keywords(doc, idf, m), m, doc)) == m


@given(st.lists(st.lists(st.sampled_from(VOCAB), min_size=1, max_size=8), min_size=2, max_size=6), st.randoms())
def test_scores_invariant_to_document_order(docs, rnd):
    shuffled = list(docs)
    rnd.shuffle(shuffled)
    a, b = compute_idf(docs), compute_idf(shuffled)
    for doc in docs:
        assert extract_keywords(doc, a, 4) == extract_keywords(doc, b, 4)


def test_query_dump_roundtrip(tmp_path):
    split = split_from_lists(["the dog runs in snow", "a cat"], ["x", "y"])
    qs = queries_for_split(split, compute_idf(split), 3)
    dump_queries(qs, tmp_path / "q.jsonl")
    assert load_queries(tmp_path / "q.jsonl") == qs
    line = (tmp_path / "q.jsonl").read_text().splitlines()[0]
    assert line == '{"pair_id": 0, "rank": 1, "terms": ["dog"]}'
