"""TF-IDF keyword extraction and search-query generation."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from typing import Iterable, Sequence

from .corpus import CorpusSplit

STOPWORDS_VERSION = "en-1"


@lru_cache(maxsize=None)
def default_stopwords() -> frozenset[str]:
    text = resources.files("ramt").joinpath("data/stopwords_en.txt").read_text(encoding="utf-8")
    return frozenset(line.strip() for line in text.splitlines() if line.strip())


def load_stopwords(path) -> frozenset[str]:
    with open(path, encoding="utf-8") as fh:
        return frozenset(line.strip() for line in fh if line.strip())


@dataclass(frozen=True)
class Keyword:
    term: str
    score: float
    first_position: int


@dataclass(frozen=True)
class SearchQuery:
    terms: tuple[str, ...]
    rank: int


@dataclass(frozen=True)
class IdfTable:
    doc_count: int
    df: dict[str, int] = field(default_factory=dict)

    def idf(self, term: str) -> float:
        # unseen terms behave as df=0
        return math.log((1 + self.doc_count) / (1 + self.df.get(term, 0))) + 1.0


def compute_idf(split: CorpusSplit | Iterable[Sequence[str]]) -> IdfTable:
    docs = split.side("source") if isinstance(split, CorpusSplit) else list(split)
    if not docs:
        raise ValueError("cannot compute idf over an empty split")
    df: dict[str, int] = {}
    for doc in docs:
        for term in set(doc):
            df[term] = df.get(term, 0) + 1
    return IdfTable(len(docs), df)


def _is_candidate(token: str, stopwords: frozenset[str]) -> bool:
    return token not in stopwords and any(ch.isalnum() for ch in token)


def extract_keywords(
    sentence: Sequence[str],
    idf: IdfTable,
    m: int,
    stopwords: frozenset[str] | None = None,
) -> list[Keyword]:
    """Top-``m`` terms by tf*idf; ties go to the earlier first occurrence, then lexicographic.

    Pure-punctuation tokens are never candidates.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    stopwords = default_stopwords() if stopwords is None else stopwords
    n = len(sentence)
    counts: dict[str, int] = {}
    first: dict[str, int] = {}
    for pos, tok in enumerate(sentence):
        if not _is_candidate(tok, stopwords):
            continue
        counts[tok] = counts.get(tok, 0) + 1
        first.setdefault(tok, pos)
    scored = [Keyword(t, counts[t] / n * idf.idf(t), first[t]) for t in counts]
    scored.sort(key=lambda k: (-k.score, k.first_position, k.term))
    return scored[:m]


def generate_queries(keywords: Sequence[Keyword], m: int, sentence: Sequence[str] = ()) -> list[SearchQuery]:
    """Exactly ``m`` single-term queries, cycling the keyword list when it is short."""
    if m < 1:
        raise ValueError("m must be >= 1")
    if keywords:
        terms = [keywords[k % len(keywords)].term for k in range(m)]
    else:
        if not sentence:
            raise ValueError("cannot build queries for an empty sentence")
        terms = [sentence[0]] * m
    return [SearchQuery((t,), rank) for rank, t in enumerate(terms, start=1)]


def queries_for_split(
    split: CorpusSplit,
    idf: IdfTable,
    m: int,
    stopwords: frozenset[str] | None = None,
) -> dict[int, list[SearchQuery]]:
    return {
        p.pair_id: generate_queries(extract_keywords(p.source_tokens, idf, m, stopwords), m, p.source_tokens)
        for p in split.pairs
    }


def dump_queries(queries: dict[int, list[SearchQuery]], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for pair_id in sorted(queries):
            for q in queries[pair_id]:
                fh.write(json.dumps({"pair_id": pair_id, "rank": q.rank, "terms": list(q.terms)}) + "\n")


def load_queries(path) -> dict[int, list[SearchQuery]]:
    out: dict[int, list[SearchQuery]] = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            out.setdefault(int(rec["pair_id"]), []).append(SearchQuery(tuple(rec["terms"]), int(rec["rank"])))
    for qs in out.values():
        qs.sort(key=lambda q: q.rank)
    return out
