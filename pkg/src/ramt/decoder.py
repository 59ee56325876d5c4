"""Bidirectional text/visual attention, co-attentive conditional GRU decoder, greedy search."""

from __future__ import annotations

from typing import NamedTuple

import torch
from torch import nn

from .corpus import BOS, EOS, PAD
from .encoders import GRUCell


class EnhancedRepresentations(NamedTuple):
    text_enh: torch.Tensor  # (B, N, 2d)
    visual_enh: torch.Tensor | None  # (B, L', 2d); None when there is no visual pathway
    text_mask: torch.Tensor  # (B, N)
    text_attn: torch.Tensor | None = None  # (B, N, L'), softmax over L'
    visual_attn: torch.Tensor | None = None  # (B, L', N), softmax over N


class StepOutput(NamedTuple):
    state: torch.Tensor  # s_t, (B, H)
    c_t: torch.Tensor  # (B, 2d)
    v_t: torch.Tensor  # (B, 2d)
    probs: torch.Tensor  # (B, V)
    log_probs: torch.Tensor  # (B, V)
    text_weights: torch.Tensor  # (B, N)
    visual_weights: torch.Tensor | None  # (B, L')


class AdditiveAttention(nn.Module):
    """score_n = w . tanh(W s + U x_n)."""

    def __init__(self, query_dim: int, key_dim: int, attn_dim: int):
        super().__init__()
        self.W = nn.Parameter(torch.empty(attn_dim, query_dim))
        self.U = nn.Parameter(torch.empty(attn_dim, key_dim))
        self.w = nn.Parameter(torch.empty(attn_dim))

    def forward(self, query: torch.Tensor, keys: torch.Tensor, mask: torch.Tensor | None = None):
        scores = torch.tanh((query @ self.W.T).unsqueeze(1) + keys @ self.U.T) @ self.w
        if mask is not None:
            scores = scores.masked_fill(~mask, float("-inf"))
        weights = torch.softmax(scores, dim=-1)
        return (weights.unsqueeze(-1) * keys).sum(1), weights


class DecoderParams(nn.Module):
    def __init__(
        self,
        vocab_size: int,
        embed_dim: int = 128,
        enc_hidden: int = 256,
        hidden: int = 256,
        feature_dim: int = 1024,
        attn_dim: int | None = None,
        out_dim: int | None = None,
    ):
        super().__init__()
        ctx = 2 * enc_hidden
        attn_dim = hidden if attn_dim is None else attn_dim
        out_dim = embed_dim if out_dim is None else out_dim
        self.vocab_size = vocab_size
        self.embedding = nn.Parameter(torch.empty(vocab_size, embed_dim))
        self.W_p = nn.Parameter(torch.empty(ctx, feature_dim))
        self.W_b = nn.Parameter(torch.empty(ctx, ctx))
        self.W_t = nn.Parameter(torch.empty(ctx, 2 * ctx))
        self.W_v = nn.Parameter(torch.empty(ctx, 2 * ctx))
        self.W_init = nn.Parameter(torch.empty(hidden, ctx))
        self.gru1 = GRUCell(embed_dim, hidden)
        self.gru2 = GRUCell(2 * ctx, hidden)
        self.text_attention = AdditiveAttention(hidden, ctx, attn_dim)
        self.visual_attention = AdditiveAttention(hidden, ctx, attn_dim)
        self.W_1 = nn.Parameter(torch.empty(out_dim, hidden))
        self.W_2 = nn.Parameter(torch.empty(out_dim, ctx))
        self.W_3 = nn.Parameter(torch.empty(out_dim, ctx))
        self.W_4 = nn.Parameter(torch.empty(out_dim, embed_dim))
        self.W_o = nn.Parameter(torch.empty(vocab_size, out_dim))


def bidirectional_attention(
    states: torch.Tensor,
    text_mask: torch.Tensor | None,
    visual: torch.Tensor | None,
    params: DecoderParams,
) -> EnhancedRepresentations:
    """Cross-enhance text states (B, N, 2d) and visual rows (B, L', D_v).

    With projected visual rows v_l = W_p a_l and E[n, l] = h_n' W_b v_l:
      text_enh_n   = tanh(W_t [h_n ; sum_l softmax_l(E[n]) v_l])
      visual_enh_l = tanh(W_v [v_l ; v_l * sum_n softmax_n(E[:, l]) h_n])
    so a zero visual input yields zero visual_enh. ``visual=None`` is the
    text-only reduction: the cross context is zero and visual_enh is absent.
    """
    squeeze = states.dim() == 2
    if squeeze:
        states = states.unsqueeze(0)
        text_mask = None if text_mask is None else text_mask.unsqueeze(0)
        visual = None if visual is None else visual.unsqueeze(0)
    if text_mask is None:
        text_mask = torch.ones(states.shape[:2], dtype=torch.bool)
    if visual is None:
        ctx = torch.zeros_like(states)
        text_enh = torch.tanh(torch.cat([states, ctx], -1) @ params.W_t.T)
        out = EnhancedRepresentations(text_enh, None, text_mask)
    else:
        if visual.shape[-1] != params.W_p.shape[1] or visual.shape[0] != states.shape[0]:
            raise ValueError(f"visual shape {tuple(visual.shape)} incompatible with W_p {tuple(params.W_p.shape)}")
        proj = visual @ params.W_p.T  # (B, L', 2d)
        E = states @ params.W_b @ proj.transpose(1, 2)  # (B, N, L')
        t_attn = torch.softmax(E, dim=2)
        text_enh = torch.tanh(torch.cat([states, t_attn @ proj], -1) @ params.W_t.T)
        v_attn = torch.softmax(E.masked_fill(~text_mask.unsqueeze(-1), float("-inf")), dim=1).transpose(1, 2)
        attended = v_attn @ states  # (B, L', 2d)
        visual_enh = torch.tanh(torch.cat([proj, proj * attended], -1) @ params.W_v.T)
        out = EnhancedRepresentations(text_enh, visual_enh, text_mask, t_attn, v_attn)
    if squeeze:
        return EnhancedRepresentations(*(None if x is None else x[0] for x in out))
    return out


def initial_state(pooled: torch.Tensor, params: DecoderParams) -> torch.Tensor:
    return torch.tanh(pooled @ params.W_init.T)


def decode_step(
    state: torch.Tensor,
    y_prev: torch.Tensor,
    enh: EnhancedRepresentations,
    params: DecoderParams,
    dropout: nn.Module | None = None,
) -> StepOutput:
    if int(y_prev.min()) < 0 or int(y_prev.max()) >= params.vocab_size:
        raise IndexError(f"previous token id out of range [0, {params.vocab_size})")
    emb = params.embedding[y_prev]
    s1 = params.gru1(emb, state)
    c_t, text_w = params.text_attention(s1, enh.text_enh, enh.text_mask)
    if enh.visual_enh is None:
        v_t, vis_w = torch.zeros_like(c_t), None
    else:
        v_t, vis_w = params.visual_attention(s1, enh.visual_enh)
    s_t = params.gru2(torch.cat([c_t, v_t], -1), s1)
    pre = torch.tanh(s_t @ params.W_1.T + c_t @ params.W_2.T + v_t @ params.W_3.T + emb @ params.W_4.T)
    if dropout is not None:
        pre = dropout(pre)
    logits = (pre @ params.W_o.T).clone()
    logits[:, PAD] = float("-inf")
    log_probs = torch.log_softmax(logits, dim=-1)
    return StepOutput(s_t, c_t, v_t, log_probs.exp(), log_probs, text_w, vis_w)


def teacher_forced(
    enh: EnhancedRepresentations,
    s0: torch.Tensor,
    tgt: torch.Tensor,
    params: DecoderParams,
    dropout: nn.Module | None = None,
) -> torch.Tensor:
    """Log-probabilities (B, T, V) for predicting tgt[:, 1:] from tgt[:, :-1]."""
    state = s0
    out = []
    for t in range(tgt.shape[1] - 1):
        step = decode_step(state, tgt[:, t], enh, params, dropout)
        state = step.state
        out.append(step.log_probs)
    return torch.stack(out, 1)


@torch.no_grad()
def greedy_decode(enh: EnhancedRepresentations, s0: torch.Tensor, params: DecoderParams, max_len: int) -> list[list[int]]:
    """Argmax decoding (ties to the smaller id) until EOS or max_len tokens."""
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    B = s0.shape[0]
    y = torch.full((B,), BOS, dtype=torch.long)
    state = s0
    out: list[list[int]] = [[] for _ in range(B)]
    done = [False] * B
    for _ in range(max_len):
        step = decode_step(state, y, enh, params)
        state = step.state
        y = torch.argmax(step.log_probs, dim=-1)
        for b, tok in enumerate(y.tolist()):
            if done[b]:
                continue
            if tok == EOS:
                done[b] = True
            else:
                out[b].append(tok)
        if all(done):
            break
    return out
