"""The full translation model: shared encoder/decoder with condition-specific visual wiring."""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .decoder import DecoderParams, EnhancedRepresentations, bidirectional_attention, greedy_decode, initial_state, teacher_forced
from .encoders import EncoderParams, attend_over_grids, encode_text, pool_text
from .filters import RegionFilterParams, filter_regions_batch

# what each condition feeds the decoder
VISUAL_MODES = {
    "text_only": "none",
    "random_images": "grids",
    "blank_images": "grids",
    "retrieved_images": "grids",
    "image_filter": "grids",
    "region_filter": "regions",
    "both_filters": "regions",
    "supplementary_text": "texts",
    "visual_and_text": "grids+texts",
}


@dataclass
class ModelDims:
    embed: int = 128
    hidden: int = 256  # per direction of the text encoder
    dec_hidden: int = 256
    feature_dim: int = 1024  # D_v
    grid_rows: int = 196  # L
    key_dim: int = 256  # d_k
    region_attn_dim: int = 256  # d_a


@dataclass
class VisualInputs:
    """Per-batch visual tensors; which ones are set depends on the condition."""

    grids: torch.Tensor | None = None  # (B, M, L, D_v)
    regions: torch.Tensor | None = None  # (B, M*O, D_v)
    texts: torch.Tensor | None = None  # (B, M, L, D_v)
    o: int = 0


class TranslationModel(nn.Module):
    def __init__(self, src_vocab: int, tgt_vocab: int, dims: ModelDims, condition: str = "text_only",
                 dropout: float = 0.0, freeze_region_filter: bool = False):
        super().__init__()
        if condition not in VISUAL_MODES:
            raise ValueError(f"unknown condition {condition!r}")
        self.dims = dims
        self.condition = condition
        self.encoder = EncoderParams(src_vocab, dims.embed, dims.hidden, dims.feature_dim, dims.key_dim)
        self.decoder = DecoderParams(tgt_vocab, dims.embed, dims.hidden, dims.dec_hidden, dims.feature_dim)
        self.region_filter = RegionFilterParams(dims.feature_dim, 2 * dims.hidden, dims.region_attn_dim)
        self.region_filter.requires_grad_(not freeze_region_filter)
        self.dropout = nn.Dropout(dropout)

    @property
    def mode(self) -> str:
        return VISUAL_MODES[self.condition]

    def reset_parameters(self, generator: torch.Generator, scale: float = 0.1) -> None:
        with torch.no_grad():
            for _, p in self.named_parameters():
                p.copy_(torch.rand(p.shape, generator=generator, dtype=p.dtype) * (2 * scale) - scale)

    def visual_representation(self, pooled: torch.Tensor, visual: VisualInputs | None) -> torch.Tensor | None:
        mode = self.mode
        if mode == "none":
            return None
        if visual is None:
            raise ValueError(f"condition {self.condition!r} needs visual inputs")
        if mode == "grids":
            return attend_over_grids(pooled, visual.grids, self.encoder.visual_fusion).values
        if mode == "regions":
            return filter_regions_batch(visual.regions, pooled, visual.o, self.region_filter)
        if mode == "texts":
            return attend_over_grids(pooled, visual.texts, self.encoder.text_fusion).values
        image = attend_over_grids(pooled, visual.grids, self.encoder.visual_fusion).values
        text = attend_over_grids(pooled, visual.texts, self.encoder.text_fusion).values
        return (image + text) / 2

    def encode(self, src: torch.Tensor, visual: VisualInputs | None) -> tuple[EnhancedRepresentations, torch.Tensor]:
        enc = encode_text(src, self.encoder)
        states = self.dropout(enc.states)
        pooled = pool_text(states, enc.mask)
        fused = self.visual_representation(pooled, visual)
        enh = bidirectional_attention(states, enc.mask, fused, self.decoder)
        return enh, initial_state(pooled, self.decoder)

    def forward(self, src: torch.Tensor, tgt: torch.Tensor, visual: VisualInputs | None = None) -> torch.Tensor:
        enh, s0 = self.encode(src, visual)
        return teacher_forced(enh, s0, tgt, self.decoder, self.dropout)

    @torch.no_grad()
    def translate(self, src: torch.Tensor, visual: VisualInputs | None = None, max_len: int = 50) -> list[list[int]]:
        was_training = self.training
        self.eval()
        try:
            enh, s0 = self.encode(src, visual)
            return greedy_decode(enh, s0, self.decoder, max_len)
        finally:
            self.train(was_training)
