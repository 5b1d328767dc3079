"""Small BERT-style text encoder trained from scratch."""

from __future__ import annotations

import torch
from torch import nn

from castmm.encoders.vocab import MAX_LEN, TokenSequence
from castmm.nn.attention import MultiHeadAttention
from castmm.nn.core import activation
from castmm.nn.layers import Embedding, LayerNorm, Linear


class EncoderBlock(nn.Module):
    def __init__(self, dim: int, n_heads: int, ffn_mult: int = 4):
        super().__init__()
        self.ln1 = LayerNorm(dim)
        self.attn = MultiHeadAttention(dim, dim, dim, n_heads)
        self.ln2 = LayerNorm(dim)
        self.ff1 = Linear(dim, ffn_mult * dim)
        self.ff2 = Linear(ffn_mult * dim, dim)

    def forward(self, x, allowed):
        h = self.ln1(x)
        a, _ = self.attn(h, h, allowed)
        x = x + a
        return x + self.ff2(activation(self.ff1(self.ln2(x)), "gelu"))


class TextEncoder(nn.Module):
    def __init__(self, vocab_size: int, dim: int = 768, n_layers: int = 2, n_heads: int = 12, max_len: int = MAX_LEN):
        super().__init__()
        self.dim = dim
        self.tokens = Embedding(vocab_size, dim)
        self.positions = Embedding(max_len, dim)
        self.blocks = nn.ModuleList([EncoderBlock(dim, n_heads) for _ in range(n_layers)])
        self.ln_out = LayerNorm(dim)

    def forward(self, ids: torch.Tensor, allowed: torch.Tensor) -> torch.Tensor:
        """ids, allowed: (B, T). Returns every token state, (B, T, dim)."""
        pos = torch.arange(ids.shape[1]).expand_as(ids)
        x = self.tokens(ids) + self.positions(pos)
        for blk in self.blocks:
            x = blk(x, allowed)
        return self.ln_out(x)


def encode_text(seq: TokenSequence, encoder: TextEncoder) -> torch.Tensor:
    """Token embedding matrix (T, dim) for a single sequence."""
    ids = torch.from_numpy(seq.ids)[None]
    allowed = torch.from_numpy(seq.attention_allowed)[None]
    return encoder(ids, allowed)[0]
