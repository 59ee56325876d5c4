"""Corpus BLEU, retrieval-noise tallies and multi-seed reporting."""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field
from statistics import fmean
from typing import Sequence


@dataclass
class BleuReport:
    score: float
    precisions: list[float]
    brevity_penalty: float
    hyp_length: int
    ref_length: int


def _ngrams(tokens: Sequence, n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu_corpus(
    hypotheses: Sequence[Sequence],
    references: Sequence[Sequence],
    max_n: int = 4,
    smooth: bool = False,
) -> BleuReport:
    """Single-reference corpus BLEU with clipped n-gram precisions.

    Unsmoothed, any zero precision gives 0. ``smooth`` adds one to the
    numerator and denominator of every order n > 1.
    """
    if len(hypotheses) != len(references):
        raise ValueError(f"{len(hypotheses)} hypotheses vs {len(references)} references")
    matches = [0] * max_n
    totals = [0] * max_n
    hyp_len = ref_len = 0
    for hyp, ref in zip(hypotheses, references):
        hyp_len += len(hyp)
        ref_len += len(ref)
        for n in range(1, max_n + 1):
            h, r = _ngrams(hyp, n), _ngrams(ref, n)
            matches[n - 1] += sum(min(c, r[g]) for g, c in h.items())
            totals[n - 1] += max(len(hyp) - n + 1, 0)
    if smooth:
        matches = [matches[0]] + [m + 1 for m in matches[1:]]
        totals = [totals[0]] + [t + 1 for t in totals[1:]]
    precisions = [m / t if t else 0.0 for m, t in zip(matches, totals)]
    if hyp_len == 0:
        return BleuReport(0.0, precisions, 0.0, 0, ref_len)
    bp = 1.0 if hyp_len > ref_len else math.exp(1 - ref_len / hyp_len)
    if min(precisions) <= 0:
        score = 0.0
    else:
        score = bp * math.exp(sum(math.log(p) for p in precisions) / max_n)
    return BleuReport(score, precisions, bp, hyp_len, ref_len)


@dataclass
class NoiseStats:
    n_sentences: int
    n_half_or_more_nonentity_keywords: int
    n_half_or_more_noise_images: int


def _half_or_more(labels: Sequence[str], positive: str, what: str, idx: int) -> bool:
    if not labels:
        raise ValueError(f"sentence {idx}: empty {what} label list")
    return 2 * sum(1 for x in labels if x == positive) >= len(labels)


def noise_statistics(keyword_labels: Sequence[Sequence[str]], image_labels: Sequence[Sequence[str]]) -> NoiseStats:
    """Count sentences where at least half the keywords are non-entities (resp. images are noise)."""
    if len(keyword_labels) != len(image_labels):
        raise ValueError("keyword and image label lists differ in length")
    kw = sum(_half_or_more(k, "non-entity", "keyword", i) for i, k in enumerate(keyword_labels))
    im = sum(_half_or_more(m, "noise", "image", i) for i, m in enumerate(image_labels))
    return NoiseStats(len(keyword_labels), kw, im)


def load_labels(path) -> tuple[list[list[str]], list[list[str]]]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                records.append(json.loads(line))
    records.sort(key=lambda r: r["pair_id"])
    return [r["keyword_labels"] for r in records], [r["image_labels"] for r in records]


@dataclass
class RunReport:
    condition: str
    per_seed: list[float] = field(default_factory=list)
    seeds: list[int] = field(default_factory=list)

    @property
    def macro_average(self) -> float:
        return fmean(self.per_seed)

    def tsv_rows(self) -> list[str]:
        rows = [f"{self.condition}\t{s}\t{b:.6f}" for s, b in zip(self.seeds, self.per_seed)]
        rows.append(f"{self.condition}\tmacro\t{self.macro_average:.6f}")
        return rows


def macro_average_report(per_seed: Sequence[BleuReport | float], condition: str, seeds: Sequence[int] | None = None) -> RunReport:
    if not per_seed:
        raise ValueError("need at least one per-seed report")
    scores = [r.score if isinstance(r, BleuReport) else float(r) for r in per_seed]
    return RunReport(condition, scores, list(seeds) if seeds is not None else list(range(1, len(scores) + 1)))


def write_results_tsv(reports: Sequence[RunReport], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("condition\tseed\tbleu\n")
        for r in reports:
            fh.write("\n".join(r.tsv_rows()) + "\n")


def read_results_tsv(path) -> list[RunReport]:
    reports: dict[str, RunReport] = {}
    with open(path, encoding="utf-8") as fh:
        next(fh)
        for line in fh:
            cond, seed, bleu = line.rstrip("\n").split("\t")
            if seed == "macro":
                continue
            rep = reports.setdefault(cond, RunReport(cond))
            rep.seeds.append(int(seed))
            rep.per_seed.append(float(bleu))
    return list(reports.values())


CONDITION_LABELS = {
    "text_only": "Text-only NMT",
    "random_images": "MMT with Random Images",
    "blank_images": "MMT with Blank Images",
    "retrieved_images": "MMT with Retrieved Images",
    "image_filter": "+ noise image filter",
    "region_filter": "+ noise region filter",
    "both_filters": "+ noise image & region filter",
    "supplementary_text": "NMT with Retrieved Supplementary Texts",
    "visual_and_text": "+ visual & textual information",
}


def render_table(scores: dict[str, float] | Sequence[RunReport], scale: float = 1.0) -> str:
    """Two-column table, one row per condition, BLEU to two decimals.

    Pass ``scale=100`` for scores kept in [0, 1].
    """
    if not isinstance(scores, dict):
        scores = {r.condition: r.macro_average for r in scores}
    labels = [CONDITION_LABELS.get(c, c) for c in scores]
    width = max(len("Condition"), *(len(l) for l in labels))
    lines = [f"| {'Condition':<{width}} | {'BLEU':>6} |", f"|{'-' * (width + 2)}|{'-' * 8}|"]
    for label, value in zip(labels, scores.values()):
        lines.append(f"| {label:<{width}} | {value * scale:>6.2f} |")
    return "\n".join(lines)
