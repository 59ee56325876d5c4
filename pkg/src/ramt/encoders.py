"""Bidirectional GRU text encoder and text-aware attentive fusion of retrieved items."""

from __future__ import annotations

import hashlib
import math
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np
import torch
from torch import nn

from .retrieval import SupplementaryText, read_feature_file


class TextEncoding(NamedTuple):
    states: torch.Tensor  # (B, N, 2d)
    mask: torch.Tensor  # (B, N) bool, True on real tokens


class FusedRepresentation(NamedTuple):
    values: torch.Tensor  # (B, L, D_v)
    attention_weights: torch.Tensor  # (B, M)


class GRUCell(nn.Module):
    """z = s(Wz x + Uz h + bz), r = s(Wr x + Ur h + br), n = tanh(Wn x + Un (r*h) + bn),
    h' = (1 - z) * h + z * n."""

    def __init__(self, input_size: int, hidden_size: int):
        super().__init__()
        self.hidden_size = hidden_size
        self.W = nn.Parameter(torch.empty(3 * hidden_size, input_size))
        self.U = nn.Parameter(torch.empty(3 * hidden_size, hidden_size))
        self.b = nn.Parameter(torch.empty(3 * hidden_size))

    def forward(self, x: torch.Tensor, h: torch.Tensor) -> torch.Tensor:
        H = self.hidden_size
        gx = x @ self.W.T + self.b
        gh = h @ self.U[: 2 * H].T
        z = torch.sigmoid(gx[..., :H] + gh[..., :H])
        r = torch.sigmoid(gx[..., H : 2 * H] + gh[..., H:])
        n = torch.tanh(gx[..., 2 * H :] + (r * h) @ self.U[2 * H :].T)
        return (1 - z) * h + z * n


class FusionAttention(nn.Module):
    """Scaled dot-product attention: pooled text is the query, each item a key/value."""

    def __init__(self, text_dim: int, feature_dim: int, key_dim: int):
        super().__init__()
        self.key_dim = key_dim
        self.W_q = nn.Parameter(torch.empty(key_dim, text_dim))
        self.W_k = nn.Parameter(torch.empty(key_dim, feature_dim))


class EncoderParams(nn.Module):
    def __init__(self, vocab_size: int, embed_dim: int = 128, hidden: int = 256, feature_dim: int = 1024, key_dim: int = 256):
        super().__init__()
        self.vocab_size = vocab_size
        self.hidden = hidden
        self.embedding = nn.Parameter(torch.empty(vocab_size, embed_dim))
        self.fwd = GRUCell(embed_dim, hidden)
        self.bwd = GRUCell(embed_dim, hidden)
        self.visual_fusion = FusionAttention(2 * hidden, feature_dim, key_dim)
        self.text_fusion = FusionAttention(2 * hidden, feature_dim, key_dim)


def encode_text(ids: torch.Tensor, params: EncoderParams, mask: torch.Tensor | None = None) -> TextEncoding:
    """Run both recurrent directions over the embedded batch.

    Masked positions leave the running state untouched, so trailing PAD never
    reaches the backward direction and never changes real-token states.
    """
    if ids.dim() == 1:
        ids = ids.unsqueeze(0)
    if mask is None:
        mask = ids != 0
    if ids.numel() and (int(ids.min()) < 0 or int(ids.max()) >= params.vocab_size):
        raise IndexError(f"token id out of range [0, {params.vocab_size})")
    emb = params.embedding[ids]
    B, N, _ = emb.shape
    h = emb.new_zeros(B, params.hidden)
    fwd = []
    for n in range(N):
        keep = mask[:, n : n + 1]
        h = torch.where(keep, params.fwd(emb[:, n], h), h)
        fwd.append(h)
    h = emb.new_zeros(B, params.hidden)
    bwd = [None] * N
    for n in reversed(range(N)):
        keep = mask[:, n : n + 1]
        h = torch.where(keep, params.bwd(emb[:, n], h), h)
        bwd[n] = h
    states = torch.cat([torch.stack(fwd, 1), torch.stack(bwd, 1)], dim=-1)
    return TextEncoding(states, mask)


def pool_text(enc: TextEncoding | torch.Tensor, mask: torch.Tensor | None = None) -> torch.Tensor:
    """Mean over unmasked rows. Accepts (N, D) or (B, N, D)."""
    if isinstance(enc, TextEncoding):
        states, mask = enc.states, enc.mask if mask is None else mask
    else:
        states = enc
    squeeze = states.dim() == 2
    if squeeze:
        states = states.unsqueeze(0)
        mask = None if mask is None else mask.unsqueeze(0)
    if mask is None:
        mask = torch.ones(states.shape[:2], dtype=torch.bool)
    counts = mask.sum(1, keepdim=True)
    if bool((counts == 0).any()):
        raise ValueError("cannot pool a fully masked sentence")
    pooled = (states * mask.unsqueeze(-1).to(states.dtype)).sum(1) / counts.to(states.dtype)
    return pooled[0] if squeeze else pooled


def attend_over_grids(pooled: torch.Tensor, grids: torch.Tensor, fusion: FusionAttention) -> FusedRepresentation:
    """alpha = softmax(W_q c . W_k meanrow(A_m) / sqrt(d_k)); output sum_m alpha_m A_m.

    pooled: (B, 2d) or (2d,); grids: (B, M, L, D_v) or (M, L, D_v).
    """
    squeeze = pooled.dim() == 1
    if squeeze:
        pooled, grids = pooled.unsqueeze(0), grids.unsqueeze(0)
    if grids.dim() != 4:
        raise ValueError(f"grids must be (B, M, L, D_v), got shape {tuple(grids.shape)}")
    q = pooled @ fusion.W_q.T  # (B, d_k)
    k = grids.mean(2) @ fusion.W_k.T  # (B, M, d_k)
    scores = (k @ q.unsqueeze(-1)).squeeze(-1) / math.sqrt(fusion.key_dim)
    alpha = torch.softmax(scores, dim=-1)
    values = (alpha[:, :, None, None] * grids).sum(1)
    if squeeze:
        return FusedRepresentation(values[0], alpha[0])
    return FusedRepresentation(values, alpha)


def stack_grids(grids: Sequence, dtype=torch.float64) -> torch.Tensor:
    """Stack ImageFeatureGrid objects or arrays of one shape into an (M, L, D_v) tensor."""
    mats = [np.asarray(getattr(g, "values", g)) for g in grids]
    shapes = {m.shape for m in mats}
    if len(shapes) != 1:
        raise ValueError(f"grid shapes differ: {sorted(shapes)}")
    return torch.as_tensor(np.stack(mats), dtype=dtype)


# ---------------------------------------------------------------------------
# supplementary texts


class HashEmbeddingProvider:
    """Token -> fixed pseudo-random vector seeded by the token's UTF-8 bytes."""

    def __init__(self, dim: int, scale: float | None = None):
        self.dim = dim
        self.scale = 1.0 / math.sqrt(dim) if scale is None else scale
        self._cache: dict[str, np.ndarray] = {}

    def vector(self, token: str) -> np.ndarray:
        if token not in self._cache:
            seed = int.from_bytes(hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest(), "little")
            self._cache[token] = np.random.default_rng(seed).standard_normal(self.dim) * self.scale
        return self._cache[token]

    def features(self, text: SupplementaryText | Sequence[str]) -> np.ndarray:
        tokens = text.tokens if isinstance(text, SupplementaryText) else list(text)
        if not tokens:
            return np.zeros((0, self.dim))
        return np.stack([self.vector(t) for t in tokens])


class FixtureTextProvider:
    """Precomputed N_t x D_v matrices stored as ``<root>/<source_id>.mmtf``."""

    def __init__(self, root):
        self.root = Path(root)

    def features(self, text: SupplementaryText) -> np.ndarray:
        path = self.root / f"{text.source_id}.mmtf"
        if not path.exists():
            raise FileNotFoundError(f"text feature fixture missing: {path}")
        return read_feature_file(path).values


def pad_or_truncate(features: np.ndarray | torch.Tensor, length: int) -> torch.Tensor:
    """Zero-pad (or cut) the row dimension to ``length``."""
    x = torch.as_tensor(np.asarray(features) if not torch.is_tensor(features) else features)
    rows, dim = x.shape
    if rows >= length:
        return x[:length]
    return torch.cat([x, x.new_zeros(length - rows, dim)], dim=0)


def supplementary_grids(texts: Sequence[SupplementaryText], provider, length: int, dtype=torch.float64) -> torch.Tensor:
    """(M, L, D_v) stack of padded text feature matrices."""
    return torch.stack([pad_or_truncate(provider.features(t), length).to(dtype) for t in texts])


def encode_supplementary(
    pooled: torch.Tensor,
    texts: Sequence[SupplementaryText] | torch.Tensor,
    fusion: FusionAttention,
    text_provider=None,
    length: int | None = None,
) -> FusedRepresentation:
    """Fuse M supplementary texts exactly like image grids, after padding each to L rows.

    ``texts`` may be precomputed padded grids (B, M, L, D_v) / (M, L, D_v).
    """
    if torch.is_tensor(texts):
        grids = texts
    else:
        if text_provider is None or length is None:
            raise ValueError("text_provider and length are required for raw texts")
        grids = supplementary_grids(texts, text_provider, length, dtype=pooled.dtype)
    return attend_over_grids(pooled, grids, fusion)
