"""Finite-difference checks of every differentiable operation on tiny float64 shapes."""

from __future__ import annotations

import torch

from .decoder import bidirectional_attention, decode_step, initial_state
from .encoders import attend_over_grids, encode_supplementary, encode_text, pool_text
from .filters import region_score
from .model import ModelDims, TranslationModel, VisualInputs
from .training import cross_entropy_loss, gradient_check

TINY = ModelDims(embed=3, hidden=2, dec_hidden=3, feature_dim=4, grid_rows=3, key_dim=3, region_attn_dim=3)
VOCAB = 7


def tiny_model(condition: str = "retrieved_images", seed: int = 0, scale: float = 1.0) -> TranslationModel:
    model = TranslationModel(VOCAB, VOCAB, TINY, condition).double()
    model.reset_parameters(torch.Generator().manual_seed(seed), scale)
    model.eval()
    return model


def _readout(x: torch.Tensor, gen: torch.Generator) -> torch.Tensor:
    """Fixed random linear functional, so no output direction is left unchecked."""
    return (x * torch.randn(x.shape, generator=gen, dtype=x.dtype)).sum()


def _inputs(seed: int):
    g = torch.Generator().manual_seed(seed + 1)
    src = torch.tensor([[4, 5, 6], [5, 4, 0]])
    tgt = torch.tensor([[1, 4, 5, 2], [1, 6, 2, 0]])
    grids = torch.randn(2, 2, TINY.grid_rows, TINY.feature_dim, generator=g, dtype=torch.float64)
    return g, src, tgt, grids


def check_encode_text(seed: int = 0) -> dict[str, float]:
    model = tiny_model(seed=seed)
    g, src, _, _ = _inputs(seed)
    w = torch.randn(2, 3, 2 * TINY.hidden, generator=g, dtype=torch.float64)
    enc = model.encoder

    def f():
        e = encode_text(src, enc)
        return (e.states * w * e.mask.unsqueeze(-1)).sum()

    return gradient_check(f, {f"encoder.{n}": p for n, p in enc.named_parameters() if n.startswith(("embedding", "fwd", "bwd"))})


def check_attend_over_grids(seed: int = 0) -> dict[str, float]:
    model = tiny_model(seed=seed)
    g, _, _, grids = _inputs(seed)
    pooled = torch.randn(2, 2 * TINY.hidden, generator=g, dtype=torch.float64, requires_grad=True)
    grids = grids.clone().requires_grad_(True)
    w = torch.randn(2, TINY.grid_rows, TINY.feature_dim, generator=g, dtype=torch.float64)
    fusion = model.encoder.visual_fusion
    f = lambda: (attend_over_grids(pooled, grids, fusion).values * w).sum()  # noqa: E731
    return gradient_check(f, {"W_q": fusion.W_q, "W_k": fusion.W_k, "pooled": pooled, "grids": grids})


def check_encode_supplementary(seed: int = 0) -> dict[str, float]:
    model = tiny_model(seed=seed)
    g = torch.Generator().manual_seed(seed + 2)
    pooled = torch.randn(1, 2 * TINY.hidden, generator=g, dtype=torch.float64, requires_grad=True)
    # two texts of 2 and 4 rows: one padded, one truncated to L=3
    raw = [torch.randn(2, TINY.feature_dim, generator=g, dtype=torch.float64), torch.randn(4, TINY.feature_dim, generator=g, dtype=torch.float64)]
    feats = [r.clone().requires_grad_(True) for r in raw]
    w = torch.randn(1, TINY.grid_rows, TINY.feature_dim, generator=g, dtype=torch.float64)
    fusion = model.encoder.text_fusion

    def f():
        from .encoders import pad_or_truncate

        grids = torch.stack([pad_or_truncate(x, TINY.grid_rows) for x in feats]).unsqueeze(0)
        return (encode_supplementary(pooled, grids, fusion).values * w).sum()

    return gradient_check(f, {"W_q": fusion.W_q, "W_k": fusion.W_k, "pooled": pooled, "text0": feats[0], "text1": feats[1]})


def check_bidirectional_attention(seed: int = 0) -> dict[str, float]:
    model = tiny_model(seed=seed)
    g = torch.Generator().manual_seed(seed + 3)
    states = torch.randn(2, 3, 2 * TINY.hidden, generator=g, dtype=torch.float64, requires_grad=True)
    mask = torch.tensor([[True, True, True], [True, True, False]])
    visual = torch.randn(2, TINY.grid_rows, TINY.feature_dim, generator=g, dtype=torch.float64, requires_grad=True)
    wt = torch.randn(2, 3, 2 * TINY.hidden, generator=g, dtype=torch.float64)
    wv = torch.randn(2, TINY.grid_rows, 2 * TINY.hidden, generator=g, dtype=torch.float64)
    dec = model.decoder

    def f():
        enh = bidirectional_attention(states, mask, visual, dec)
        return (enh.text_enh * wt * mask.unsqueeze(-1)).sum() + (enh.visual_enh * wv).sum()

    return gradient_check(f, {"W_p": dec.W_p, "W_b": dec.W_b, "W_t": dec.W_t, "W_v": dec.W_v, "states": states, "visual": visual})


def check_decode_step(seed: int = 0) -> dict[str, float]:
    model = tiny_model(seed=seed)
    g = torch.Generator().manual_seed(seed + 4)
    dec = model.decoder
    states = torch.randn(2, 3, 2 * TINY.hidden, generator=g, dtype=torch.float64)
    mask = torch.tensor([[True, True, True], [True, False, False]])
    visual = torch.randn(2, TINY.grid_rows, TINY.feature_dim, generator=g, dtype=torch.float64)
    gold = torch.tensor([4, 2])
    # the readout keeps every step output in the loss; cross-entropy alone leaves some
    # attention gradients near 1e-8, where central differences are mostly roundoff
    readout = {k: torch.randn(2, n, generator=g, dtype=torch.float64) for k, n in (("s", TINY.dec_hidden), ("c", 2 * TINY.hidden), ("v", 2 * TINY.hidden))}

    def f():
        enh = bidirectional_attention(states, mask, visual, dec)
        s0 = initial_state(pool_text(states, mask), dec)
        step = decode_step(s0, torch.tensor([1, 5]), enh, dec)
        loss = cross_entropy_loss(step.log_probs.unsqueeze(1), gold.unsqueeze(1), log_space=True)
        return loss + (step.state * readout["s"]).sum() + (step.c_t * readout["c"]).sum() + (step.v_t * readout["v"]).sum()

    return gradient_check(f, {f"decoder.{n}": p for n, p in dec.named_parameters()})


def check_region_score(seed: int = 0) -> dict[str, float]:
    model = tiny_model("region_filter", seed=seed)
    g = torch.Generator().manual_seed(seed + 5)
    regions = torch.randn(5, TINY.feature_dim, generator=g, dtype=torch.float64, requires_grad=True)
    pooled = torch.randn(2 * TINY.hidden, generator=g, dtype=torch.float64, requires_grad=True)
    w = torch.randn(5, generator=g, dtype=torch.float64)
    p = model.region_filter
    f = lambda: (region_score(regions, pooled, p) * w).sum()  # noqa: E731
    return gradient_check(f, {"V_a": p.V_a, "W_a": p.W_a, "U_a": p.U_a, "a_o": regions, "C'": pooled})


def check_pipeline(seed: int = 0, condition: str = "retrieved_images") -> dict[str, float]:
    """End-to-end teacher-forced loss of the tiny model against every parameter."""
    model = tiny_model(condition, seed=seed)
    _, src, tgt, grids = _inputs(seed)
    # every mode reads the same random grids; regions are their rows
    vis = VisualInputs(grids=grids, regions=grids.flatten(1, 2), texts=grids, o=TINY.grid_rows)
    f = lambda: cross_entropy_loss(model(src, tgt, vis), tgt[:, 1:], log_space=True)  # noqa: E731
    return gradient_check(f, dict(model.named_parameters()))


OPERATIONS = {
    "encode_text": check_encode_text,
    "attend_over_grids": check_attend_over_grids,
    "encode_supplementary": check_encode_supplementary,
    "bidirectional_attention": check_bidirectional_attention,
    "decode_step": check_decode_step,
    "region_score": check_region_score,
}
