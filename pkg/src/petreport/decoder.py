"""Toy causal report decoder.

A deliberately small transformer LM with the interface of the big
decoders it stands in for: token or embedding inputs, a weight-tied
output head, named attention projections (q_proj/k_proj/v_proj/o_proj)
for adapter injection, and a frozen base with the marker-token embedding
rows as the only built-in trainable parameters.
"""

from __future__ import annotations

import math
from typing import Optional, Tuple

import torch
import torch.nn.functional as F
from torch import nn

from .errors import ConfigError

DECODER_LAYERS = 2
DECODER_HEADS = 4
MAX_POSITIONS = 4096  # prompt limit plus generation cap fits comfortably


class PartitionedEmbedding(nn.Module):
    """Frozen word embeddings with a trainable block of special-token rows.

    The special ids must be contiguous so the full matrix can be stitched
    back together differentiably for the weight-tied head.
    """

    def __init__(self, vocab_size: int, width: int, special_range: Tuple[int, int]):
        super().__init__()
        lo, hi = special_range
        if not 0 <= lo < hi <= vocab_size:
            raise ConfigError(
                f"special id range {special_range} out of bounds for vocab {vocab_size}"
            )
        self.vocab_size = vocab_size
        self.special_range = (lo, hi)
        base = torch.randn(vocab_size, width) * 0.02
        self.base = nn.Parameter(base, requires_grad=False)
        self.special_token_embeddings = nn.Parameter(base[lo:hi].clone())

    def weight(self) -> torch.Tensor:
        lo, hi = self.special_range
        return torch.cat(
            [self.base[:lo], self.special_token_embeddings, self.base[hi:]], dim=0
        )

    def forward(self, ids: torch.Tensor) -> torch.Tensor:
        return F.embedding(ids, self.weight())


class CausalSelfAttention(nn.Module):
    def __init__(self, width: int, heads: int):
        super().__init__()
        if width % heads:
            raise ConfigError(f"width {width} not divisible by {heads} heads")
        self.heads = heads
        self.q_proj = nn.Linear(width, width)
        self.k_proj = nn.Linear(width, width)
        self.v_proj = nn.Linear(width, width)
        self.o_proj = nn.Linear(width, width)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, l, w = x.shape
        split = lambda t: t.view(b, l, self.heads, w // self.heads).transpose(1, 2)
        q, k, v = split(self.q_proj(x)), split(self.k_proj(x)), split(self.v_proj(x))
        out = F.scaled_dot_product_attention(q, k, v, is_causal=True)
        return self.o_proj(out.transpose(1, 2).reshape(b, l, w))


class DecoderBlock(nn.Module):
    def __init__(self, width: int, heads: int):
        super().__init__()
        self.ln_attn = nn.LayerNorm(width)
        self.attn = CausalSelfAttention(width, heads)
        self.ln_mlp = nn.LayerNorm(width)
        self.mlp = nn.Sequential(
            nn.Linear(width, 4 * width), nn.GELU(), nn.Linear(4 * width, width)
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = x + self.attn(self.ln_attn(x))
        return x + self.mlp(self.ln_mlp(x))


class ToyDecoder(nn.Module):
    """Small causal LM; every base parameter is frozen at construction."""

    def __init__(self, vocab_size: int, width: int, special_range: Tuple[int, int],
                 layers: int = DECODER_LAYERS, heads: int = DECODER_HEADS,
                 max_positions: int = MAX_POSITIONS):
        super().__init__()
        self.width = width
        self.embedding = PartitionedEmbedding(vocab_size, width, special_range)
        self.pos_embed = nn.Parameter(torch.randn(max_positions, width) * 0.02)
        self.blocks = nn.ModuleList(DecoderBlock(width, heads) for _ in range(layers))
        self.ln_final = nn.LayerNorm(width)
        for name, p in self.named_parameters():
            if "special_token_embeddings" not in name:
                p.requires_grad_(False)

    def embed_ids(self, ids: torch.Tensor) -> torch.Tensor:
        return self.embedding(ids)

    def forward(self, input_ids: Optional[torch.Tensor] = None,
                inputs_embeds: Optional[torch.Tensor] = None) -> torch.Tensor:
        if (input_ids is None) == (inputs_embeds is None):
            raise ValueError("pass exactly one of input_ids / inputs_embeds")
        if inputs_embeds is None:
            inputs_embeds = self.embed_ids(input_ids)
        b, l, _ = inputs_embeds.shape
        if l > self.pos_embed.shape[0]:
            raise ValueError(
                f"sequence length {l} exceeds positional table {self.pos_embed.shape[0]}"
            )
        hidden = inputs_embeds + self.pos_embed[:l]
        for block in self.blocks:
            hidden = block(hidden)
        hidden = self.ln_final(hidden)
        # weight-tied head: marker rows stay trainable through the tie
        return hidden @ self.embedding.weight().t()
