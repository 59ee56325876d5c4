"""Noise-image and noise-region filtering by text/visual relevance."""

from __future__ import annotations

import json
from typing import Callable, Sequence

import numpy as np
import torch
from torch import nn


def top_k_stable(scores: Sequence[float] | torch.Tensor, k: int) -> list[int]:
    """Indices of the k highest scores, score-descending, ties in input order."""
    s = scores.tolist() if torch.is_tensor(scores) else list(scores)
    return sorted(range(len(s)), key=lambda i: (-s[i], i))[:k]


class CosineScorer:
    """cos(W_s c, meanrow(grid)); W_s defaults to the identity."""

    def __init__(self, W_s: np.ndarray | None = None):
        self.W_s = None if W_s is None else np.asarray(W_s, dtype=np.float64)

    def __call__(self, pooled, grid, candidate_index: int = 0, pair_id: int | None = None) -> float:
        c = np.asarray(pooled, dtype=np.float64)
        if self.W_s is not None:
            c = self.W_s @ c
        g = np.asarray(getattr(grid, "values", grid), dtype=np.float64).mean(0)
        denom = np.linalg.norm(c) * np.linalg.norm(g)
        return float(c @ g / denom) if denom > 0 else 0.0


class FixtureScorer:
    """Scores looked up in a table keyed by (pair_id, candidate index)."""

    def __init__(self, table: dict[tuple[int, int], float]):
        self.table = table

    @classmethod
    def load(cls, path) -> "FixtureScorer":
        table = {}
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    rec = json.loads(line)
                    table[int(rec["pair_id"]), int(rec["candidate_id"])] = float(rec["score"])
        return cls(table)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for (pid, cid), score in sorted(self.table.items()):
                fh.write(json.dumps({"pair_id": pid, "candidate_id": cid, "score": score}) + "\n")

    def __call__(self, pooled, grid, candidate_index: int = 0, pair_id: int | None = None) -> float:
        try:
            return self.table[pair_id, candidate_index]
        except KeyError:
            raise KeyError(f"no fixture score for pair {pair_id}, candidate {candidate_index}") from None


Scorer = Callable[..., float]


def filter_images(candidates: Sequence, pooled, m: int, scorer: Scorer, pair_id: int | None = None) -> list:
    """Keep the m candidates the scorer ranks highest."""
    if len(candidates) < m:
        raise ValueError(f"need at least m={m} candidates, got {len(candidates)}")
    scores = [scorer(pooled, g, candidate_index=i, pair_id=pair_id) for i, g in enumerate(candidates)]
    return [candidates[i] for i in top_k_stable(scores, m)]


class RegionFilterParams(nn.Module):
    def __init__(self, feature_dim: int = 1024, text_dim: int = 512, attn_dim: int = 256):
        super().__init__()
        self.V_a = nn.Parameter(torch.empty(attn_dim))
        self.W_a = nn.Parameter(torch.empty(attn_dim, feature_dim))
        self.U_a = nn.Parameter(torch.empty(attn_dim, text_dim))


def region_score(regions: torch.Tensor, pooled: torch.Tensor, params: RegionFilterParams) -> torch.Tensor:
    """S(a_o, C') = V_a . tanh(W_a a_o + U_a C').

    regions (..., R, D_v) with pooled (..., 2d) -> scores (..., R); a single
    region vector gives a scalar.
    """
    if regions.shape[-1] != params.W_a.shape[1] or pooled.shape[-1] != params.U_a.shape[1]:
        raise ValueError(
            f"shape mismatch: regions {tuple(regions.shape)}, pooled {tuple(pooled.shape)}, "
            f"W_a {tuple(params.W_a.shape)}, U_a {tuple(params.U_a.shape)}"
        )
    text = pooled @ params.U_a.T
    if regions.dim() > 1:
        text = text.unsqueeze(-2)
    return torch.tanh(regions @ params.W_a.T + text) @ params.V_a


def filter_regions(regions: torch.Tensor, pooled: torch.Tensor, o: int, params: RegionFilterParams) -> tuple[torch.Tensor, list[int]]:
    """Top-o regions of one sentence, score-descending; returns (o x D_v, kept indices)."""
    if regions.shape[0] < o:
        raise ValueError(f"need at least o={o} regions, got {regions.shape[0]}")
    with torch.no_grad():
        scores = region_score(regions, pooled, params)
    keep = top_k_stable(scores, o)
    return regions[keep], keep


def filter_regions_batch(regions: torch.Tensor, pooled: torch.Tensor, o: int, params: RegionFilterParams) -> torch.Tensor:
    """Batched form: regions (B, R, D_v), pooled (B, 2d) -> (B, o, D_v)."""
    if regions.shape[1] < o:
        raise ValueError(f"need at least o={o} regions, got {regions.shape[1]}")
    with torch.no_grad():
        scores = region_score(regions, pooled, params)
    keep = torch.tensor([top_k_stable(row, o) for row in scores], dtype=torch.long)
    return torch.gather(regions, 1, keep.unsqueeze(-1).expand(-1, -1, regions.shape[-1]))
