"""Multi-head scaled dot-product attention."""

from __future__ import annotations

import math

import torch
from torch import nn

from castmm.nn.core import matmul, softmax_rows
from castmm.nn.layers import Linear


class MultiHeadAttention(nn.Module):
    """Queries from ``x`` (dim ``d_query``), keys/values from ``ctx`` (dim ``d_ctx``).

    Projections carry no bias, so a zero value projection yields a zero update.
    """

    def __init__(self, d_query: int, d_ctx: int, attn_dim: int, n_heads: int, d_out: int | None = None):
        super().__init__()
        if attn_dim % n_heads:
            raise ValueError(f"attn_dim {attn_dim} not divisible by n_heads {n_heads}")
        self.n_heads = n_heads
        self.head_dim = attn_dim // n_heads
        self.q = Linear(d_query, attn_dim, bias=False)
        self.k = Linear(d_ctx, attn_dim, bias=False)
        self.v = Linear(d_ctx, attn_dim, bias=False)
        self.o = Linear(attn_dim, d_out or d_query, bias=False)

    def _heads(self, t):
        b, n, _ = t.shape
        return t.reshape(b, n, self.n_heads, self.head_dim).transpose(1, 2)

    def forward(self, x, ctx, key_allowed=None):
        """x: (B, N, dq), ctx: (B, T, dc), key_allowed: (B, T) bool.

        Returns the projected output (B, N, d_out) and weights (B, H, N, T).
        """
        q, k, v = self._heads(self.q(x)), self._heads(self.k(ctx)), self._heads(self.v(ctx))
        scores = matmul(q, k.transpose(-1, -2)) * (1.0 / math.sqrt(self.head_dim))
        allowed = None if key_allowed is None else key_allowed[:, None, None, :]
        weights = softmax_rows(scores, allowed)
        out = matmul(weights, v).transpose(1, 2).reshape(x.shape[0], x.shape[1], -1)
        return self.o(out), weights
